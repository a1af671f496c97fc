//! Oracle adapters that call a remote model server over HTTP.
//!
//! One JSON request per call, one JSON response back. Scores arrive as
//! `{"score": f}` and text as `{"text": s}`; see docs/oracle-wire.md.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use venus_core::oracle::{OracleError, OrmOracle, Rollout, RolloutOracle, RolloutRequest, SummarizerOracle};
use venus_core::trajectory::{render_history, HistoryContext, Step, Trajectory};

#[derive(Debug, Clone)]
pub struct HttpOracle {
    base: String,
    client: Client,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Deserialize)]
struct RolloutResponse {
    rollouts: Vec<Rollout>,
}

#[derive(Serialize)]
struct SummarizeBody<'a> {
    task: &'a str,
    step: &'a Step,
}

#[derive(Serialize)]
struct CompareBody<'a> {
    summary: &'a str,
    task: &'a str,
}

#[derive(Serialize)]
struct AnswerBody<'a> {
    task: &'a str,
    screenshot_ref: &'a str,
}

#[derive(Serialize)]
struct OrmBody<'a> {
    trajectory: &'a Trajectory,
}

#[derive(Serialize)]
struct RolloutBody<'a> {
    trace_id: &'a str,
    step: u32,
    task: &'a str,
    screenshot_ref: &'a str,
    history: &'a HistoryContext,
    /// The history as it appears in the navigation prompt.
    rendered_history: String,
    r: usize,
}

impl HttpOracle {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, OracleError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError(format!("http client: {e}")))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            client,
        })
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, OracleError> {
        let url = format!("{}/{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| OracleError(format!("POST {url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(OracleError(format!("POST {url}: {status}: {}", text.trim())));
        }
        resp.json()
            .map_err(|e| OracleError(format!("POST {url}: bad response: {e}")))
    }

    fn score<B: Serialize>(&self, path: &str, body: &B) -> Result<f64, OracleError> {
        let r: ScoreResponse = self.call(path, body)?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(OracleError(format!("{path}: score {} outside [0, 1]", r.score)));
        }
        Ok(r.score)
    }
}

impl SummarizerOracle for HttpOracle {
    fn summarize(&self, task: &str, step: &Step) -> Result<String, OracleError> {
        self.call::<_, TextResponse>("summarize", &SummarizeBody { task, step })
            .map(|r| r.text)
    }

    fn compare(&self, trace_summary: &str, task: &str) -> Result<f64, OracleError> {
        self.score(
            "compare",
            &CompareBody {
                summary: trace_summary,
                task,
            },
        )
    }

    fn answer(&self, task: &str, screenshot_ref: &str) -> Result<String, OracleError> {
        self.call::<_, TextResponse>("answer", &AnswerBody { task, screenshot_ref })
            .map(|r| r.text)
    }
}

impl OrmOracle for HttpOracle {
    fn score(&self, trajectory: &Trajectory) -> Result<f64, OracleError> {
        HttpOracle::score(self, "orm", &OrmBody { trajectory })
    }
}

impl RolloutOracle for HttpOracle {
    fn rollout(&self, req: &RolloutRequest<'_>) -> Result<Vec<Rollout>, OracleError> {
        let body = RolloutBody {
            trace_id: req.trace_id,
            step: req.step,
            task: req.task,
            screenshot_ref: req.screenshot_ref,
            history: req.history,
            rendered_history: render_history(req.history),
            r: req.r,
        };
        let out: RolloutResponse = self.call("rollout", &body)?;
        if out.rollouts.len() != req.r {
            return Err(OracleError(format!(
                "rollout: asked for {} samples, got {}",
                req.r,
                out.rollouts.len()
            )));
        }
        Ok(out.rollouts)
    }
}
