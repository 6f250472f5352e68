//! Reader-model calls used to mine preference scores.

use serde::{Deserialize, Serialize};

use super::{Client, GatewayError};
use crate::prompts::{self, DocView};

/// How the reader expresses its preference for a single document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Log-probability the service reports for the single-document reader prompt.
    #[default]
    Logit,
    /// A 1-5 rating parsed from the reply.
    Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    A,
    B,
}

pub fn score_document(client: &Client, query: &str, doc: DocView<'_>, mode: ScoreMode) -> Result<f64, GatewayError> {
    match mode {
        ScoreMode::Logit => {
            let mut req = client.request(prompts::sft_prompt(query, &[doc]));
            req.logprobs = true;
            client.complete_full(&req)?.logprob.ok_or(GatewayError::MissingLogprob)
        }
        ScoreMode::Rating => {
            let reply = client.prompt(prompts::rating_prompt(query, doc))?;
            parse_rating(&reply)
        }
    }
}

/// Parses a 1-5 integer rating; a trailing period is tolerated.
pub fn parse_rating(reply: &str) -> Result<f64, GatewayError> {
    let token = reply.trim().trim_end_matches('.');
    match token.parse::<u8>() {
        Ok(v @ 1..=5) => Ok(v as f64),
        _ => Err(GatewayError::Rating { raw: reply.to_string() }),
    }
}

pub fn compare_documents(
    client: &Client,
    query: &str,
    doc_a: DocView<'_>,
    doc_b: DocView<'_>,
) -> Result<Winner, GatewayError> {
    let reply = client.prompt(prompts::pairwise_prompt(query, doc_a, doc_b))?;
    match reply.trim() {
        "A" => Ok(Winner::A),
        "B" => Ok(Winner::B),
        _ => Err(GatewayError::Comparison { raw: reply }),
    }
}
