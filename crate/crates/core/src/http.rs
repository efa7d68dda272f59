//! Blocking JSON-over-HTTP client with bounded retries for the model server.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    base: String,
    agent: ureq::Agent,
    policy: RetryPolicy,
}

impl JsonClient {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .build();
        JsonClient {
            base: endpoint.trim_end_matches('/').to_string(),
            agent: config.into(),
            policy,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    /// POST `body` to `path`. Transport failures and 5xx responses are
    /// retried; 4xx and undecodable bodies are not.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.base, path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.policy.retries => {
                    attempt += 1;
                    std::thread::sleep(self.policy.backoff * attempt);
                }
                Err(Error::Remote { message, retryable }) => {
                    return Err(Error::Remote {
                        message: format!("{message} (after {} attempts)", attempt + 1),
                        retryable,
                    })
                }
                other => return other,
            }
        }
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp> {
        let mut response = match self.agent.post(url).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => {
                return Err(Error::Remote {
                    message: format!("POST {url} returned HTTP {code}"),
                    retryable: code >= 500,
                })
            }
            Err(e) => {
                return Err(Error::Remote {
                    message: format!("POST {url}: {e}"),
                    retryable: true,
                })
            }
        };
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| Error::Protocol(format!("POST {url}: undecodable response: {e}")))
    }
}
