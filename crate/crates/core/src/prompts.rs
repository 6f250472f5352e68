//! Prompt templates.
//!
//! Every prompt the toolkit sends or emits is rendered here, byte for byte.
//! The golden files under `tests/golden/` pin the rendered output. The
//! `parse_*` helpers invert the renderers so offline mock models can answer
//! from the prompt text alone.

/// A document as it appears inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocView<'a> {
    pub title: &'a str,
    pub text: &'a str,
}

impl<'a> DocView<'a> {
    pub fn new(title: &'a str, text: &'a str) -> Self {
        Self { title, text }
    }
}

impl<'a> From<&'a crate::model::Document> for DocView<'a> {
    fn from(d: &'a crate::model::Document) -> Self {
        Self { title: &d.title, text: &d.text }
    }
}

const ANSWER_PREFIX: &str = "Given the documents ";
const ANSWER_INSTRUCTION: &str = ". Answer the following question based on the given information or your internal knowledge with few words without the source. Query: ";
const JUDGEMENT_PREFIX: &str = "\n[Judgement]: document-";
const JUDGEMENT_SUFFIX: &str = " is Positive or Negative knowledge for answering question.";

/// Renders `document-{i}: (title) {title} (content) {text}` lines, 1-based, newline-joined.
pub fn render_documents(docs: &[DocView<'_>]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("document-{}: (title) {} (content) {}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reader prompt used for supervised fine-tuning, evaluation and per-document trials.
pub fn sft_prompt(query: &str, docs: &[DocView<'_>]) -> String {
    format!("{ANSWER_PREFIX}{}{ANSWER_INSTRUCTION}{query}.", render_documents(docs))
}

/// Pre-aligned prompt: the reader prompt plus the judgement line for the preference document.
pub fn prealigned_prompt(query: &str, docs: &[DocView<'_>], pref_position: usize) -> String {
    format!("{}{JUDGEMENT_PREFIX}{pref_position}{JUDGEMENT_SUFFIX}", sft_prompt(query, docs))
}

/// The supervised judgement sentence of a pre-aligned target.
pub fn judgement_sentence(pref_position: usize, positive: bool) -> String {
    let word = if positive { "Positive" } else { "Negative" };
    format!("[Judgement]: document-{pref_position} is {word} knowledge for answering question.")
}

pub fn augmentation_prompt(query: &str, docs: &[DocView<'_>], title: &str, requirement: &str) -> String {
    format!(
        "You are an AI assistant helping me rewrite the query. I will give you the original query, reference document, title and rewriting requirements. Please rewrite the query based on the following information:\n\
         Original Query: {query}\n\
         Reference Documents: {}\n\
         Title: {title}\n\
         Augmentation Requirements: {requirement}\n\
         New Queries:",
        render_documents(docs)
    )
}

pub fn rating_prompt(query: &str, doc: DocView<'_>) -> String {
    format!(
        "Rate how helpful the document is for answering the query on a scale from 1 to 5, where 5 means the document lets you answer correctly. Reply with a single digit.\n\
         Query: {query}\n\
         {}\n\
         Rating:",
        render_documents(&[doc])
    )
}

pub fn pairwise_prompt(query: &str, doc_a: DocView<'_>, doc_b: DocView<'_>) -> String {
    format!(
        "Which of the two documents is more helpful for answering the query? Reply with exactly one letter, A or B.\n\
         Query: {query}\n\
         Document A: (title) {} (content) {}\n\
         Document B: (title) {} (content) {}\n\
         Answer:",
        doc_a.title, doc_a.text, doc_b.title, doc_b.text
    )
}

/// Query and (title, text) pairs recovered from a reader prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswerPrompt {
    pub query: String,
    pub docs: Vec<(String, String)>,
}

fn parse_doc_line(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("document-")?;
    let (_, rest) = rest.split_once(": (title) ")?;
    let (title, text) = rest.split_once(" (content) ")?;
    Some((title.to_string(), text.to_string()))
}

fn parse_doc_block(block: &str) -> Option<Vec<(String, String)>> {
    if block.is_empty() {
        return Some(Vec::new());
    }
    block.split('\n').map(parse_doc_line).collect()
}

/// Inverts [`sft_prompt`] (and the first part of [`prealigned_prompt`]).
pub fn parse_answer_prompt(prompt: &str) -> Option<ParsedAnswerPrompt> {
    let body = prompt.strip_prefix(ANSWER_PREFIX)?;
    let body = match body.find(JUDGEMENT_PREFIX) {
        Some(i) => &body[..i],
        None => body,
    };
    let (block, query) = body.rsplit_once(ANSWER_INSTRUCTION)?;
    let query = query.strip_suffix('.')?;
    Some(ParsedAnswerPrompt { query: query.to_string(), docs: parse_doc_block(block)? })
}

/// Recovers (query, document text) from a rating prompt.
pub fn parse_rating_prompt(prompt: &str) -> Option<(String, String)> {
    let mut lines = prompt.lines();
    if !lines.next()?.starts_with("Rate how helpful") {
        return None;
    }
    let query = lines.next()?.strip_prefix("Query: ")?.to_string();
    let (_, text) = parse_doc_line(lines.next()?)?;
    Some((query, text))
}

/// Recovers (query, text A, text B) from a pairwise prompt.
pub fn parse_pairwise_prompt(prompt: &str) -> Option<(String, String, String)> {
    let mut lines = prompt.lines();
    if !lines.next()?.starts_with("Which of the two documents") {
        return None;
    }
    let query = lines.next()?.strip_prefix("Query: ")?.to_string();
    let a = lines.next()?.strip_prefix("Document A: (title) ")?.split_once(" (content) ")?.1.to_string();
    let b = lines.next()?.strip_prefix("Document B: (title) ")?.split_once(" (content) ")?.1.to_string();
    Some((query, a, b))
}

/// Recovers (original query, requirement sentence) from an augmentation prompt.
pub fn parse_augmentation_prompt(prompt: &str) -> Option<(String, String)> {
    if !prompt.starts_with("You are an AI assistant helping me rewrite the query.") {
        return None;
    }
    let mut query = None;
    let mut requirement = None;
    for line in prompt.lines() {
        if let Some(q) = line.strip_prefix("Original Query: ") {
            query = Some(q.to_string());
        } else if let Some(r) = line.strip_prefix("Augmentation Requirements: ") {
            requirement = Some(r.to_string());
        }
    }
    Some((query?, requirement?))
}
