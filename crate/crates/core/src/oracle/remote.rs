//! Blocking HTTP/JSON client for an external fill-mask service.
//!
//! Endpoints:
//! - `POST /fill-mask {template_id, text, mask_count, top_k}` → `{masks: [[{token, prob}]]}`
//! - `POST /fine-tune {pairs: [{text, answer_tokens}], epochs}` → `{job_id}`
//! - `GET /fine-tune/{job_id}` → `{status}` with status in queued|running|done|failed
//!
//! Connection failures and 5xx answers are transport errors and are retried;
//! 4xx answers and malformed bodies are protocol errors.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{FillMaskQuery, FineTunePair, Oracle, OracleError, TokenProb};

#[derive(Debug, Clone)]
pub struct RemoteOracle {
    base_url: String,
    agent: Agent,
    /// Extra attempts after a transport error.
    pub retries: usize,
    pub poll_interval: Duration,
    pub max_polls: usize,
}

#[derive(Deserialize)]
struct FillMaskResponse {
    masks: Vec<Vec<TokenProb>>,
}

#[derive(Serialize)]
struct FineTuneRequest<'a> {
    pairs: &'a [FineTunePair],
    epochs: usize,
}

#[derive(Deserialize)]
struct FineTuneResponse {
    job_id: String,
}

#[derive(Deserialize)]
struct JobStatus {
    status: String,
}

impl RemoteOracle {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteOracle {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            retries: 2,
            poll_interval: Duration::from_millis(500),
            max_polls: 7200,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, OracleError>) -> Result<T, OracleError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("{e}; retry {attempt}/{}", self.retries);
                }
                other => return other,
            }
        }
    }

    fn decode<T: DeserializeOwned>(
        what: &str,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, OracleError> {
        let mut resp = result.map_err(|e| OracleError::Transport(format!("{what}: {e}")))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(OracleError::Transport(format!("{what}: server answered {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(OracleError::Protocol(format!("{what}: rejected with {status}: {body}")));
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| OracleError::Protocol(format!("{what}: malformed response: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, OracleError> {
        let url = format!("{}{path}", self.base_url);
        self.with_retries(|| Self::decode(&format!("POST {url}"), self.agent.post(&url).send_json(body)))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, OracleError> {
        let url = format!("{}{path}", self.base_url);
        self.with_retries(|| Self::decode(&format!("GET {url}"), self.agent.get(&url).call()))
    }
}

impl Oracle for RemoteOracle {
    fn fill_mask(&self, query: &FillMaskQuery) -> Result<Vec<Vec<TokenProb>>, OracleError> {
        let resp: FillMaskResponse = self.post("/fill-mask", query)?;
        if resp.masks.len() != query.mask_count {
            return Err(OracleError::Protocol(format!(
                "fill-mask for `{}`: expected {} masks, got {}",
                query.text,
                query.mask_count,
                resp.masks.len()
            )));
        }
        Ok(resp.masks)
    }

    fn fine_tune(&mut self, pairs: &[FineTunePair], epochs: usize) -> Result<(), OracleError> {
        let job: FineTuneResponse = self.post("/fine-tune", &FineTuneRequest { pairs, epochs })?;
        let id_ok = !job.job_id.is_empty()
            && job
                .job_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !id_ok {
            return Err(OracleError::Protocol(format!("invalid job id `{}`", job.job_id)));
        }
        for _ in 0..self.max_polls {
            let s: JobStatus = self.get(&format!("/fine-tune/{}", job.job_id))?;
            match s.status.as_str() {
                "done" => return Ok(()),
                "failed" => {
                    return Err(OracleError::Protocol(format!("fine-tune job {} failed", job.job_id)))
                }
                "queued" | "running" => thread::sleep(self.poll_interval),
                other => {
                    return Err(OracleError::Protocol(format!(
                        "fine-tune job {}: unknown status `{other}`",
                        job.job_id
                    )))
                }
            }
        }
        Err(OracleError::Transport(format!(
            "fine-tune job {} did not finish after {} polls",
            job.job_id, self.max_polls
        )))
    }
}
