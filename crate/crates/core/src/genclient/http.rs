use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{Backend, EndpointConfig, GenError, GenerationRequest, GenerationResult, RunLog, TokenLogprob};

/// Chat-completions client with bounded concurrency and retries.
#[derive(Debug)]
pub struct HttpBackend {
    cfg: EndpointConfig,
    url: String,
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
    log: Option<RunLog>,
}

#[derive(Deserialize)]
struct ChatResponse {
    model: Option<String>,
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<Message>,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<RawTokenLogprob>>,
}

#[derive(Deserialize)]
struct RawTokenLogprob {
    token: String,
    logprob: f64,
}

enum Attempt {
    Done(GenerationResult),
    Retry { message: String, after: Option<Duration> },
    Fail(GenError),
}

impl HttpBackend {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GenError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| GenError::Precondition(format!("cannot build HTTP client: {e}")))?;
        let log = match &cfg.log_file {
            Some(path) => Some(RunLog::open(path).map_err(|e| {
                GenError::Precondition(format!("cannot open request log {}: {e}", path.display()))
            })?),
            None => None,
        };
        Ok(Self {
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            limiter: Arc::new(Semaphore::new(cfg.max_concurrency)),
            cfg,
            client,
            log,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// JSON body for one request, with the image as a PNG data URI.
    pub fn request_body(&self, req: &GenerationRequest) -> Result<Value, GenError> {
        let mut content = vec![json!({"type": "text", "text": req.prompt})];
        if let Some(img) = &req.image {
            let png = img.encode_png()?;
            if png.len() > self.cfg.max_image_bytes {
                return Err(GenError::OversizedImage {
                    bytes: png.len(),
                    limit: self.cfg.max_image_bytes,
                });
            }
            let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")},
            }));
        }
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "logprobs": req.want_logprobs,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        Ok(body)
    }

    fn backoff(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let cap = Duration::from_millis(self.cfg.backoff_max_ms);
        let exp = self
            .cfg
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.backoff_max_ms);
        let half = exp / 2;
        let jittered = Duration::from_millis(half + rand::rng().random_range(0..=half));
        hint.map_or(jittered, |h| h.max(jittered)).min(cap)
    }

    async fn attempt(&self, body: &Value, attempt: u32, started: Instant) -> Attempt {
        let _permit = self.limiter.acquire().await.expect("semaphore never closed");
        if let Some(log) = &self.log {
            log.record("request", attempt, json!({"url": self.url, "body": body}));
        }
        let mut builder = self.client.post(&self.url).json(body);
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send().await {
            Ok(r) => r,
            Err(e) => {
                self.log_event("error", attempt, json!({"error": e.to_string()}));
                return Attempt::Retry {
                    message: e.to_string(),
                    after: None,
                };
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    message: format!("reading body: {e}"),
                    after: None,
                }
            }
        };
        self.log_event("response", attempt, json!({"status": status, "body": text}));
        match status {
            200..=299 => match parse_response(&text, &self.cfg.model) {
                Ok(mut r) => {
                    r.latency_ms = started.elapsed().as_millis() as u64;
                    Attempt::Done(r)
                }
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(GenError::Auth { status }),
            408 | 429 | 500..=599 => Attempt::Retry {
                message: format!("HTTP {status}"),
                after: retry_after,
            },
            _ => Attempt::Fail(GenError::Http {
                status,
                body: text.chars().take(512).collect(),
            }),
        }
    }

    fn log_event(&self, event: &str, attempt: u32, payload: Value) {
        if let Some(log) = &self.log {
            log.record(event, attempt, payload);
        }
    }
}

fn parse_response(text: &str, requested_model: &str) -> Result<GenerationResult, GenError> {
    let resp: ChatResponse =
        serde_json::from_str(text).map_err(|e| GenError::MalformedResponse(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GenError::MalformedResponse("no choices".into()))?;
    let text = choice
        .message
        .and_then(|m| m.content)
        .ok_or_else(|| GenError::MalformedResponse("choice has no message content".into()))?;
    let token_logprobs = match choice.logprobs.and_then(|l| l.content) {
        Some(items) => {
            if let Some(bad) = items.iter().find(|t| !(t.logprob <= 0.0)) {
                return Err(GenError::MalformedResponse(format!(
                    "token log-prob {} for {:?} is not <= 0",
                    bad.logprob, bad.token
                )));
            }
            Some(
                items
                    .into_iter()
                    .map(|t| TokenLogprob {
                        token: t.token,
                        logprob: t.logprob,
                    })
                    .collect(),
            )
        }
        None => None,
    };
    Ok(GenerationResult {
        text,
        token_logprobs,
        model_id: resp.model.unwrap_or_else(|| requested_model.to_string()),
        latency_ms: 0,
    })
}

#[async_trait]
impl Backend for HttpBackend {
    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GenError> {
        req.validate()?;
        let body = self.request_body(req)?;
        let started = Instant::now();
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body, attempt, started).await {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry { message, after } => {
                    log::debug!("attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        tokio::time::sleep(self.backoff(attempt - 1, after)).await;
                    }
                }
            }
        }
        Err(GenError::Transport {
            attempts,
            message: last,
        })
    }

    fn model_id(&self) -> &str {
        &self.cfg.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::ImageBuffer;
    use crate::genclient::DecodingConfig;

    fn backend(max_image_bytes: usize) -> HttpBackend {
        HttpBackend::new(EndpointConfig {
            max_image_bytes,
            ..EndpointConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn body_has_vision_parts() {
        let b = backend(1 << 20);
        let img = ImageBuffer::filled(2, 2, [9, 9, 9]).unwrap();
        let req = GenerationRequest::new("What is this?", Some(img), &DecodingConfig::default()).with_seed(5);
        let body = b.request_body(&req).unwrap();
        let content = &body["messages"][0]["content"];
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(content[0]["type"], "text");
        assert_eq!(content[0]["text"], "What is this?");
        assert_eq!(content[1]["type"], "image_url");
        assert!(content[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(body["seed"], 5);
        assert_eq!(body["max_tokens"], 1024);
        assert_eq!(body["logprobs"], false);
    }

    #[test]
    fn oversized_image_rejected() {
        let b = backend(10);
        let img = ImageBuffer::filled(16, 16, [1, 2, 3]).unwrap();
        let req = GenerationRequest::new("x", Some(img), &DecodingConfig::default());
        assert!(matches!(b.request_body(&req), Err(GenError::OversizedImage { limit: 10, .. })));
    }

    #[test]
    fn parses_responses() {
        let ok = r#"{"model":"m","choices":[{"message":{"content":"hello"},"logprobs":{"content":[{"token":"hello","logprob":-0.25}]}}]}"#;
        let r = parse_response(ok, "req").unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.model_id, "m");
        assert_eq!(r.token_logprobs.unwrap()[0].logprob, -0.25);
        assert!(matches!(parse_response("{", "m"), Err(GenError::MalformedResponse(_))));
        assert!(matches!(parse_response(r#"{"choices":[]}"#, "m"), Err(GenError::MalformedResponse(_))));
        let positive = r#"{"choices":[{"message":{"content":"x"},"logprobs":{"content":[{"token":"x","logprob":0.5}]}}]}"#;
        assert!(matches!(parse_response(positive, "m"), Err(GenError::MalformedResponse(_))));
        let r = parse_response(r#"{"choices":[{"message":{"content":"x"}}]}"#, "req").unwrap();
        assert_eq!(r.model_id, "req");
    }

    #[test]
    fn backoff_is_capped() {
        let b = HttpBackend::new(EndpointConfig {
            backoff_base_ms: 100,
            backoff_max_ms: 1000,
            ..EndpointConfig::default()
        })
        .unwrap();
        for attempt in 0..30 {
            let d = b.backoff(attempt, None);
            assert!(d <= Duration::from_millis(1000));
        }
        let first = b.backoff(0, None);
        assert!(first >= Duration::from_millis(50) && first <= Duration::from_millis(100));
        assert_eq!(b.backoff(0, Some(Duration::from_secs(60))), Duration::from_millis(1000));
    }
}
