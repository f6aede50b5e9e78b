//! Querying a vision-chat model for transportation context, with an offline
//! mock that derives answers from ground truth.

pub mod cache;
pub mod client;
pub mod ledger;
pub mod mock;
pub mod response;

use serde::{Deserialize, Serialize};

pub use crate::context::TransportationContext;
pub use cache::ResponseCache;
pub use client::{
    request_body, request_hash, EndpointConfig, FnTransport, HttpRequest, HttpResponse, LlmClient, LlmError, PromptPayload, Transport,
    TransportError, UreqTransport,
};
pub use ledger::{BudgetExceeded, Cost, Ledger};
pub use mock::{mock_oracle, NoiseConfig};
pub use response::{format_response, parse_response, ParseError, ParseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryStatus {
    Ok,
    ParseFailed,
    ApiError,
}

/// Outcome of one prompt, as stored in the cache and the annotation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub scenario_id: String,
    pub request_hash: String,
    pub response_text: String,
    pub parsed: Option<TransportationContext>,
    #[serde(default)]
    pub unparsed_words: Vec<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Millionths of a currency unit.
    pub estimated_cost: Cost,
    pub attempts: u32,
    pub status: QueryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QueryRecord {
    /// Record for an answer that never touched the network.
    pub fn offline(scenario_id: &str, request_hash: &str, ctx: TransportationContext) -> Self {
        let response_text = format_response(&ctx);
        QueryRecord {
            scenario_id: scenario_id.to_string(),
            request_hash: request_hash.to_string(),
            completion_tokens: (response_text.len() as u64).div_ceil(4),
            response_text,
            parsed: Some(ctx),
            unparsed_words: Vec::new(),
            prompt_tokens: 0,
            estimated_cost: Cost::ZERO,
            attempts: 1,
            status: QueryStatus::Ok,
            error: None,
        }
    }

    /// Record for a request that failed at the transport or API level.
    pub fn failed(scenario_id: &str, request_hash: &str, err: &LlmError) -> Self {
        let attempts = match err {
            LlmError::Api { attempts, .. } | LlmError::Timeout { attempts } | LlmError::Transport { attempts, .. } => {
                *attempts
            }
            _ => 1,
        };
        QueryRecord {
            scenario_id: scenario_id.to_string(),
            request_hash: request_hash.to_string(),
            response_text: String::new(),
            parsed: None,
            unparsed_words: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            estimated_cost: Cost::ZERO,
            attempts,
            status: QueryStatus::ApiError,
            error: Some(err.to_string()),
        }
    }
}
