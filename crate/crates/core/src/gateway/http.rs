//! Blocking HTTP backend speaking the OpenAI-style chat-completions protocol.

use serde::Deserialize;

use super::{BackendFailure, ChatBackend, EndpointConfig, GatewayError};

/// Default path appended to `base_url` when the URL does not already point at
/// a chat-completions route.
const DEFAULT_PATH: &str = "/v1/chat/completions";

/// Real HTTP backend. One instance per endpoint; safe to share across
/// threads (reqwest's blocking client pools connections internally).
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(cfg: &EndpointConfig) -> Result<HttpBackend, GatewayError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Transport { message: e.to_string() })?;
        let url = if cfg.base_url.contains("/chat/completions") {
            cfg.base_url.clone()
        } else {
            format!("{}{DEFAULT_PATH}", cfg.base_url.trim_end_matches('/'))
        };
        Ok(HttpBackend { client, url, api_key: cfg.api_key.clone() })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

impl ChatBackend for HttpBackend {
    fn execute(&self, body: &[u8]) -> Result<String, BackendFailure> {
        let mut req = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if !self.api_key.is_empty() {
            req = req.bearer_auth(&self.api_key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendFailure::Timeout
            } else {
                BackendFailure::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendFailure::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let message = text.chars().take(200).collect();
            return Err(BackendFailure::Status { code: status, message });
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| BackendFailure::Malformed(format!("bad completion payload: {e}")))?;
        match wire.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(BackendFailure::Malformed("completion had no choices".to_string())),
        }
    }
}
