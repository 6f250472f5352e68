//! HTTP backends: OpenAI-compatible chat completions and a JSON NLI endpoint.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::nli::{NliScorer, NliVerdict};
use super::{with_retries, Backend, Completion, CompletionRequest, GatewayError, RetryPolicy, Sleeper, ThreadSleeper};

pub const ENV_API_KEY: &str = "DPA_API_KEY";
pub const ENV_API_BASE: &str = "DPA_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into()
}

fn transport_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            GatewayError::Transient(e.to_string())
        }
        other => GatewayError::Malformed(other.to_string()),
    }
}

fn classify_status(status: u16, body: &str) -> Result<(), GatewayError> {
    match status {
        200..=299 => Ok(()),
        401 | 403 => Err(GatewayError::Auth(format!("HTTP {status}: {body}"))),
        408 | 409 | 429 | 500..=599 => Err(GatewayError::Transient(format!("HTTP {status}"))),
        _ => Err(GatewayError::InvalidRequest(format!("HTTP {status}: {body}"))),
    }
}

fn post_json(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(transport_error)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(transport_error)?;
    classify_status(status, &text)?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(format!("{e}: {text}")))
}

/// Chat-completions client for any OpenAI-compatible service.
#[derive(Clone)]
pub struct OpenAiBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, agent: agent(timeout) }
    }

    /// Reads `DPA_API_BASE` (default OpenAI) and `DPA_API_KEY`.
    pub fn from_env(timeout: Duration) -> Self {
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Self::new(base, std::env::var(ENV_API_KEY).ok(), timeout)
    }

    pub fn request_body(request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }
}

/// Extracts the reply text and the summed token log-probability.
pub fn parse_chat_response(v: &Value) -> Result<Completion, GatewayError> {
    let choice =
        v.get("choices").and_then(|c| c.get(0)).ok_or_else(|| GatewayError::Malformed(format!("no choices in {v}")))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Malformed(format!("no message content in {choice}")))?
        .to_string();
    let logprob = match choice.pointer("/logprobs/content").and_then(Value::as_array) {
        Some(tokens) => {
            let mut sum = 0.0;
            for t in tokens {
                sum += t
                    .get("logprob")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| GatewayError::Malformed(format!("token without logprob: {t}")))?;
            }
            Some(sum)
        }
        None => None,
    };
    Ok(Completion { text, logprob })
}

impl Backend for OpenAiBackend {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let url = format!("{}/chat/completions", self.base_url);
        let v = post_json(&self.agent, &url, self.api_key.as_deref(), &Self::request_body(request))?;
        parse_chat_response(&v)
    }
}

/// Remote NLI classifier.
///
/// `POST {base}/nli` with `{"premise": .., "hypothesis": ..}`; the reply carries
/// `"logits": [entailment, neutral, contradiction]`, softmaxed locally.
#[derive(Clone)]
pub struct HttpNli {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl HttpNli {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: agent(timeout),
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleeper: Arc<dyn Sleeper>) -> Self {
        self.retry = retry;
        self.sleeper = sleeper;
        self
    }
}

impl NliScorer for HttpNli {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
        let url = format!("{}/nli", self.base_url);
        let body = json!({"premise": premise, "hypothesis": hypothesis});
        let v = with_retries(&self.retry, self.sleeper.as_ref(), |_| {
            post_json(&self.agent, &url, self.api_key.as_deref(), &body)
        })?;
        let logits = v
            .get("logits")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 3)
            .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?, a[2].as_f64()?]))
            .ok_or_else(|| GatewayError::Malformed(format!("expected three logits in {v}")))?;
        NliVerdict::from_logits(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Client, RecordingSleeper};
    use crate::model::NliLabel;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the canned (status, body) responses in order, one per connection,
    /// and returns the captured request bodies when joined.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<(String, String)>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim_end().to_string();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push((auth, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (addr, handle)
    }

    fn fast_client(backend: OpenAiBackend) -> (Client, Arc<RecordingSleeper>) {
        let sleeper = Arc::new(RecordingSleeper::default());
        (Client::new(Arc::new(backend)).with_sleeper(sleeper.clone()), sleeper)
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"pong"},"logprobs":{"content":[{"token":"p","logprob":-0.5},{"token":"ong","logprob":-0.25}]}}]}"#;

    #[test]
    fn completes_against_local_server() {
        let (addr, handle) = serve(vec![(200, OK_BODY.to_string())]);
        let backend = OpenAiBackend::new(addr, Some("sk-test".into()), Duration::from_secs(5));
        let (client, _) = fast_client(backend);
        let mut req = client.request("ping");
        req.logprobs = true;
        let c = client.complete_full(&req).unwrap();
        assert_eq!(c.text, "pong");
        assert_eq!(c.logprob, Some(-0.75));
        let seen = handle.join().unwrap();
        assert_eq!(seen[0].0.to_ascii_lowercase(), "authorization: bearer sk-test");
        let body: Value = serde_json::from_str(&seen[0].1).unwrap();
        assert_eq!(body["messages"][0]["content"], "ping");
        assert_eq!(body["logprobs"], true);
    }

    #[test]
    fn retries_server_errors() {
        let (addr, handle) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, OK_BODY.into())]);
        let (client, sleeper) = fast_client(OpenAiBackend::new(addr, None, Duration::from_secs(5)));
        assert_eq!(client.prompt("ping").unwrap(), "pong");
        assert_eq!(sleeper.sleeps().len(), 2);
        handle.join().unwrap();
    }

    #[test]
    fn auth_and_malformed_are_distinct() {
        let (addr, handle) = serve(vec![(401, r#"{"error":"bad key"}"#.into()), (200, r#"{"choices":[]}"#.into())]);
        let (client, sleeper) = fast_client(OpenAiBackend::new(addr, None, Duration::from_secs(5)));
        assert!(matches!(client.prompt("a"), Err(GatewayError::Auth(_))));
        assert!(matches!(client.prompt("b"), Err(GatewayError::Malformed(_))));
        assert!(sleeper.sleeps().is_empty());
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_server_exhausts_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let (client, sleeper) = fast_client(OpenAiBackend::new(addr, None, Duration::from_secs(2)));
        assert!(matches!(client.prompt("a"), Err(GatewayError::RetriesExhausted { attempts: 5, .. })));
        assert_eq!(sleeper.sleeps().len(), 4);
    }

    #[test]
    fn remote_nli_softmaxes_logits() {
        let (addr, handle) = serve(vec![(500, "{}".into()), (200, r#"{"logits":[0.0,0.0,3.0]}"#.into())]);
        let sleeper = Arc::new(RecordingSleeper::default());
        let nli = HttpNli::new(addr, None, Duration::from_secs(5)).with_retry(RetryPolicy::default(), sleeper.clone());
        let v = nli.judge("a b", "c d").unwrap();
        assert_eq!(v.label, NliLabel::Contradiction);
        assert!(v.is_consistent());
        assert_eq!(sleeper.sleeps().len(), 1);
        let seen = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&seen[1].1).unwrap();
        assert_eq!(sent["premise"], "a b", "{sent}");
    }
}
