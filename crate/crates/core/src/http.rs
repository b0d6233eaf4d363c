//! Blocking JSON-over-HTTP client shared by the external detector, embedder
//! and generator.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub timeout_ms: u64,
    /// Attempts after the first one.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig { timeout_ms: 30_000, retries: 2, backoff_ms: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct JsonClient {
    url: String,
    service: &'static str,
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

/// A response that made it back from the server.
pub(crate) struct Reply {
    pub status: u16,
    pub body: Json,
    pub attempts: u32,
}

impl JsonClient {
    pub fn new(service: &'static str, url: impl Into<String>, config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Http { service, attempts: 0, msg: e.to_string() })?;
        Ok(JsonClient { url: url.into(), service, config, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body`, retrying transport failures and 5xx replies.
    pub(crate) fn post(&self, body: &Json) -> Result<Reply> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.client.post(&self.url).json(body).send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if status >= 500 && attempt < attempts {
                        last = format!("status {status}");
                    } else {
                        let text = resp.text().map_err(|e| self.err(attempt, e.to_string()))?;
                        let body = if text.trim().is_empty() {
                            Json::Null
                        } else {
                            serde_json::from_str(&text).unwrap_or(Json::String(text))
                        };
                        return Ok(Reply { status, body, attempts: attempt });
                    }
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("{} request to {} failed (attempt {attempt}/{attempts}): {last}", self.service, self.url);
            if attempt < attempts {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms * attempt as u64));
            }
        }
        Err(self.err(attempts, last))
    }

    /// POSTs and decodes a 2xx reply as `T`.
    pub(crate) fn call<T: serde::de::DeserializeOwned>(&self, body: &Json) -> Result<T> {
        let reply = self.post(body)?;
        if !(200..300).contains(&reply.status) {
            return Err(self.err(reply.attempts, format!("status {}: {}", reply.status, reply.body)));
        }
        let attempts = reply.attempts;
        serde_json::from_value(reply.body).map_err(|e| self.err(attempts, format!("bad response: {e}")))
    }

    pub(crate) fn err(&self, attempts: u32, msg: String) -> Error {
        Error::Http { service: self.service, attempts, msg }
    }
}
