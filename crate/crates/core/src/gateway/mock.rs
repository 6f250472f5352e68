//! Deterministic offline backends.
//!
//! Each mock is a pure function of the prompt and, for [`FlakyMock`], of the
//! call count, so every stage built on them is reproducible.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use super::{Backend, Completion, CompletionRequest, GatewayError};
use crate::prompts;
use crate::text::normalized_tokens;

/// Looks prompts up in a fixed table.
#[derive(Debug, Clone, Default)]
pub struct TableMock {
    table: HashMap<String, Completion>,
    fallback: Option<Completion>,
}

impl TableMock {
    pub fn strict(table: HashMap<String, String>) -> Self {
        Self { table: table.into_iter().map(|(k, v)| (k, Completion::text(v))).collect(), fallback: None }
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(Completion::text(reply));
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, reply: Completion) {
        self.table.insert(prompt.into(), reply);
    }
}

impl Backend for TableMock {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        self.table
            .get(&request.prompt)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| GatewayError::UnmappedPrompt(request.prompt.clone()))
    }
}

/// Replies with the prompt itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoMock;

impl Backend for EchoMock {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        Ok(Completion::text(request.prompt.clone()))
    }
}

/// Always returns the same completion.
#[derive(Debug, Clone)]
pub struct FixedMock(pub Completion);

impl FixedMock {
    pub fn reply(text: impl Into<String>) -> Self {
        Self(Completion::text(text))
    }

    pub fn logprob(lp: f64) -> Self {
        Self(Completion { text: String::new(), logprob: Some(lp) })
    }
}

impl Backend for FixedMock {
    fn send(&self, _: &CompletionRequest) -> Result<Completion, GatewayError> {
        Ok(self.0.clone())
    }
}

/// Fails the first `failures` calls with a transient error, then succeeds.
#[derive(Debug)]
pub struct FlakyMock {
    failures: u64,
    reply: String,
    calls: AtomicU64,
}

impl FlakyMock {
    pub fn new(failures: u64, reply: impl Into<String>) -> Self {
        Self { failures, reply: reply.into(), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for FlakyMock {
    fn send(&self, _: &CompletionRequest) -> Result<Completion, GatewayError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(GatewayError::Transient(format!("simulated failure {}", n + 1)))
        } else {
            Ok(Completion::text(self.reply.clone()))
        }
    }
}

/// Echo backend that tracks the peak number of concurrent calls.
#[derive(Debug)]
pub struct CountingMock {
    hold: Duration,
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl CountingMock {
    pub fn new(hold: Duration) -> Self {
        Self { hold, current: AtomicUsize::new(0), peak: AtomicUsize::new(0) }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Backend for CountingMock {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.hold);
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion::text(request.prompt.clone()))
    }
}

/// Fraction of the query's normalized tokens that occur in `text`.
pub fn query_overlap(query: &str, text: &str) -> f64 {
    let q = normalized_tokens(query);
    if q.is_empty() {
        return 0.0;
    }
    let t: std::collections::HashSet<String> = normalized_tokens(text).into_iter().collect();
    q.iter().filter(|w| t.contains(*w)).count() as f64 / q.len() as f64
}

/// Extracts the `answer is X` statements of a text, in order.
pub fn answer_statements(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut rest = lower.as_str();
    while let Some(i) = rest.find("answer is ") {
        rest = &rest[i + "answer is ".len()..];
        let ans: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
        if !ans.is_empty() {
            out.push(ans);
        }
    }
    out
}

/// Rule-based rewrite used by [`PromptMock`] for augmentation prompts.
pub fn scripted_rewrite(query: &str, requirement: &str) -> String {
    use crate::model::Strategy;
    let strategy = Strategy::ALL.into_iter().find(|s| s.requirement() == requirement);
    match strategy {
        Some(Strategy::Rephrasing) => format!("In other words, {query}"),
        Some(Strategy::Complexity) => format!("{query} and how does it relate to its wider context"),
        Some(Strategy::Decomposition) => format!("Sub-problem 1: {query} Sub-problem 2: which source confirms it"),
        Some(Strategy::Constraint) => format!("{query} considering only verified records"),
        Some(Strategy::Sparql) => {
            let key = query.split_whitespace().last().unwrap_or("entity").trim_end_matches('?');
            format!("SELECT ?answer WHERE {{ ?answer dbo:code dbr:{key} . }}")
        }
        None => query.to_string(),
    }
}

/// Offline stand-in for the reader and augmentation models.
///
/// * reader prompts: replies with every `answer is X` statement found in the
///   documents, otherwise with a memorized answer, otherwise `"unknown"`; the
///   reported log-probability is `ln(max(overlap, 0.01))` of the query with the
///   document text.
/// * rating prompts: `1 + round(4 * overlap)`.
/// * pairwise prompts: the document with the larger overlap, `A` on ties.
/// * augmentation prompts: [`scripted_rewrite`].
#[derive(Debug, Clone, Default)]
pub struct PromptMock {
    memory: HashMap<String, String>,
}

impl PromptMock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers the reader gives for `query` without documents.
    pub fn with_memory(memory: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { memory: memory.into_iter().map(|(q, a)| (normalized_tokens(&q).join(" "), a)).collect() }
    }

    fn answer(&self, parsed: &prompts::ParsedAnswerPrompt) -> Completion {
        let mut statements: Vec<String> = Vec::new();
        for (_, text) in &parsed.docs {
            for s in answer_statements(text) {
                if !statements.contains(&s) {
                    statements.push(s);
                }
            }
        }
        let text = if !statements.is_empty() {
            statements.join(", ")
        } else {
            self.memory
                .get(&normalized_tokens(&parsed.query).join(" "))
                .cloned()
                .unwrap_or_else(|| "unknown".to_string())
        };
        let joined: String = parsed.docs.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join(" ");
        let overlap = query_overlap(&parsed.query, &joined);
        Completion { text, logprob: Some(overlap.max(0.01).ln()) }
    }
}

impl Backend for PromptMock {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let p = &request.prompt;
        if let Some(parsed) = prompts::parse_answer_prompt(p) {
            return Ok(self.answer(&parsed));
        }
        if let Some((query, text)) = prompts::parse_rating_prompt(p) {
            let rating = 1 + (4.0 * query_overlap(&query, &text)).round() as u32;
            return Ok(Completion::text(rating.to_string()));
        }
        if let Some((query, a, b)) = prompts::parse_pairwise_prompt(p) {
            let pick = if query_overlap(&query, &a) >= query_overlap(&query, &b) { "A" } else { "B" };
            return Ok(Completion::text(pick));
        }
        if let Some((query, requirement)) = prompts::parse_augmentation_prompt(p) {
            return Ok(Completion::text(scripted_rewrite(&query, &requirement)));
        }
        Err(GatewayError::UnmappedPrompt(p.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::DocView;

    fn send(m: &PromptMock, prompt: String) -> Completion {
        m.send(&CompletionRequest::new(prompt, "mock")).unwrap()
    }

    #[test]
    fn reader_uses_document_statements_then_memory() {
        let m = PromptMock::with_memory([("what is the code of topic t1".to_string(), "zq001k".to_string())]);
        let gold = DocView::new("T", "topic t1 note. The answer is zq001k.");
        let other = DocView::new("U", "topic t2 note. The answer is zq002k.");
        let noise = DocView::new("N", "unrelated filler");
        let q = "what is the code of topic t1";
        assert_eq!(send(&m, prompts::sft_prompt(q, &[gold])).text, "zq001k");
        assert_eq!(send(&m, prompts::sft_prompt(q, &[other, gold])).text, "zq002k, zq001k");
        assert_eq!(send(&m, prompts::sft_prompt(q, &[noise])).text, "zq001k");
        assert_eq!(send(&m, prompts::sft_prompt("never seen", &[])).text, "unknown");
    }

    #[test]
    fn logprob_tracks_overlap() {
        let m = PromptMock::new();
        let q = "code of topic t1";
        let hi = send(&m, prompts::sft_prompt(q, &[DocView::new("T", "topic t1 code of")])).logprob.unwrap();
        let lo = send(&m, prompts::sft_prompt(q, &[DocView::new("T", "nothing here")])).logprob.unwrap();
        assert!((hi - 0.0).abs() < 1e-12);
        assert!((lo - 0.01f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn answer_statement_extraction() {
        assert_eq!(answer_statements("The answer is Zq1. And the answer is b_2!"), ["zq1", "b_2"]);
        assert!(answer_statements("no statement").is_empty());
    }

    #[test]
    fn sparql_rewrite_starts_with_select() {
        let r = scripted_rewrite("which code belongs to topic t0017", crate::model::Strategy::Sparql.requirement());
        assert!(r.starts_with("SELECT"), "{r}");
        assert!(r.contains("dbr:t0017"));
    }
}
