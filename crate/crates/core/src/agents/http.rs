//! Remote model adapters over a chat-style HTTP interface.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Agent, AgentError, AgentResponse, Call, Capability};
use crate::promptkit::{ImagePayload, Prompt, SegmentContent, Turn};

const ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestShape {
    /// `messages` with `text` and `image_url` parts; reply in
    /// `choices[0].message.content`.
    OpenaiChat,
    /// `messages` with `text` and base64 `image` parts; reply in `content[]`.
    AnthropicMessages,
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> u64 {
    120
}

fn default_retry_base() -> u64 {
    500
}

fn default_max_tokens() -> u32 {
    256
}

/// One provider endpoint. The credential itself is read from the
/// environment variable named by `auth_env` at request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub name: String,
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub max_images: Option<usize>,
    #[serde(default = "default_true")]
    pub supports_images: bool,
    #[serde(default)]
    pub supports_scoring: bool,
    pub request_shape: RequestShape,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Receives `{model, messages, continuation}` and answers
    /// `{tokens: [{token, logprob}]}`.
    #[serde(default)]
    pub score_endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retry_base")]
    pub retry_base_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl AdapterConfig {
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("cannot read adapter config {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load_named(dir: &Path, name: &str) -> Result<Self, AgentError> {
        Self::load(&dir.join(format!("{name}.json")))
    }

    pub fn check(&self) -> Result<(), AgentError> {
        if self.supports_images && self.max_images == Some(0) {
            return Err(AgentError::Config(format!(
                "adapter {}: max_images must be at least 1 when images are supported",
                self.name
            )));
        }
        if self.supports_scoring && self.score_endpoint.is_none() {
            return Err(AgentError::Config(format!(
                "adapter {} supports scoring but has no score_endpoint",
                self.name
            )));
        }
        if self.requests_per_minute == Some(0) {
            return Err(AgentError::Config(format!("adapter {}: requests_per_minute is 0", self.name)));
        }
        Ok(())
    }

    pub fn capability(&self) -> Capability {
        Capability {
            max_images: if self.supports_images { self.max_images } else { Some(0) },
            supports_scoring: self.supports_scoring,
            supports_images: self.supports_images,
        }
    }
}

type Slot = Arc<Mutex<Option<Instant>>>;

/// Shared per-adapter request pacing, so concurrent games respect one
/// provider limit.
fn limiter_slot(name: &str) -> Slot {
    static SLOTS: OnceLock<Mutex<HashMap<String, Slot>>> = OnceLock::new();
    let mut map = SLOTS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(name.to_string()).or_default().clone()
}

pub struct HttpAgent {
    config: AdapterConfig,
    client: ureq::Agent,
    slot: Slot,
}

enum Failure {
    Transient(String),
    Fatal(AgentError),
}

impl HttpAgent {
    pub fn new(config: AdapterConfig) -> Self {
        let client: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let slot = limiter_slot(&config.name);
        Self { config, client, slot }
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    fn pace(&self) {
        let Some(rpm) = self.config.requests_per_minute else {
            return;
        };
        let gap = Duration::from_secs_f64(60.0 / rpm as f64);
        let mut last = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        self.pace();
        let mut req = self.client.post(url).header("content-type", "application/json");
        if let Some(var) = &self.config.auth_env {
            let key = std::env::var(var).map_err(|_| {
                Failure::Fatal(AgentError::Config(format!(
                    "adapter {}: environment variable {var} is not set",
                    self.config.name
                )))
            })?;
            req = match self.config.request_shape {
                RequestShape::OpenaiChat => req.header("authorization", &format!("Bearer {key}")),
                RequestShape::AnthropicMessages => {
                    req.header("x-api-key", &key).header("anthropic-version", "2023-06-01")
                }
            };
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(AgentError::Protocol(format!("body is not JSON: {e}")))),
            429 | 500..=599 => Err(Failure::Transient(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(Failure::Fatal(AgentError::Protocol(format!("HTTP {status}: {}", snippet(&text))))),
        }
    }

    /// POST with bounded retries and exponential backoff on transient
    /// failures.
    fn post(&self, url: &str, body: &Value) -> Result<Value, AgentError> {
        let mut last = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                let delay = self.config.retry_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(m)) => {
                    log::warn!("{}: attempt {} failed: {m}", self.config.name, attempt + 1);
                    last = m;
                }
            }
        }
        Err(AgentError::Transport {
            attempts: ATTEMPTS,
            message: last,
        })
    }

    /// Chat messages for `prompt` in the configured wire shape.
    pub fn messages(&self, prompt: &Prompt) -> Result<Vec<Value>, AgentError> {
        let mut out = Vec::new();
        for (turn, items) in prompt.turns() {
            let role = match turn {
                Turn::Harness => "user",
                Turn::Agent => "assistant",
            };
            let mut parts = Vec::new();
            for item in items {
                parts.push(match item {
                    SegmentContent::Text(t) => json!({"type": "text", "text": t}),
                    SegmentContent::Image(p) => self.image_part(p)?,
                });
            }
            out.push(json!({"role": role, "content": parts}));
        }
        Ok(out)
    }

    fn image_part(&self, payload: &ImagePayload) -> Result<Value, AgentError> {
        let raster = payload.raster().map_err(|e| AgentError::Script(e.to_string()))?;
        let mut png = Vec::new();
        raster
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| AgentError::Script(format!("encoding image: {e}")))?;
        let data = base64::engine::general_purpose::STANDARD.encode(png);
        Ok(match self.config.request_shape {
            RequestShape::OpenaiChat => json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{data}")}
            }),
            RequestShape::AnthropicMessages => json!({
                "type": "image",
                "source": {"type": "base64", "media_type": "image/png", "data": data}
            }),
        })
    }

    pub fn request_body(&self, call: &Call<'_>) -> Result<Value, AgentError> {
        Ok(json!({
            "model": self.config.model,
            "temperature": call.decode.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": self.messages(call.prompt)?,
        }))
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

fn reply_text(shape: RequestShape, v: &Value) -> Result<String, AgentError> {
    let missing = || AgentError::Protocol(format!("no reply text in {}", snippet(&v.to_string())));
    match shape {
        RequestShape::OpenaiChat => {
            let content = v.pointer("/choices/0/message/content").ok_or_else(missing)?;
            match content {
                Value::String(s) => Ok(s.clone()),
                Value::Array(parts) => Ok(parts.iter().filter_map(|p| p.get("text")?.as_str()).collect()),
                _ => Err(missing()),
            }
        }
        RequestShape::AnthropicMessages => {
            let parts = v.get("content").and_then(Value::as_array).ok_or_else(missing)?;
            Ok(parts
                .iter()
                .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|p| p.get("text")?.as_str())
                .collect())
        }
    }
}

impl Agent for HttpAgent {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn capability(&self) -> Capability {
        self.config.capability()
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        let body = self.request_body(call)?;
        let started = Instant::now();
        let raw = self.post(&self.config.endpoint, &body)?;
        let text = reply_text(self.config.request_shape, &raw)?;
        Ok(AgentResponse {
            text,
            token_logprobs: None,
            latency_ms: started.elapsed().as_millis() as u64,
            raw,
        })
    }

    fn token_logprobs(&mut self, prefix: &Prompt, continuation: &str) -> Result<Vec<(String, f64)>, AgentError> {
        let url = self.config.score_endpoint.clone().ok_or_else(|| {
            AgentError::Capability(format!("{} has no scoring endpoint", self.config.name))
        })?;
        let body = json!({
            "model": self.config.model,
            "messages": self.messages(prefix)?,
            "continuation": continuation,
        });
        let v = self.post(&url, &body)?;
        let tokens = v
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| AgentError::Protocol("score response has no tokens array".into()))?;
        tokens
            .iter()
            .map(|t| {
                let tok = t.get("token").and_then(Value::as_str);
                let lp = t.get("logprob").and_then(Value::as_f64);
                match (tok, lp) {
                    (Some(tok), Some(lp)) => Ok((tok.to_string(), lp)),
                    _ => Err(AgentError::Protocol(format!("bad token entry {t}"))),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    use super::*;
    use crate::agents::{complete, score_text, Decode};
    use crate::model::{ImageRef, Role};

    /// Serves the canned (status, body) replies in order, one per
    /// connection, and forwards each request body.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, Value)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream);
                let mut headers = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let _ = tx.send((headers, serde_json::from_slice(&buf).unwrap_or(Value::Null)));
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn config(endpoint: &str, shape: RequestShape) -> AdapterConfig {
        AdapterConfig {
            name: format!("test-{endpoint}"),
            endpoint: endpoint.to_string(),
            model: "m".into(),
            auth_env: None,
            max_images: Some(16),
            supports_images: true,
            supports_scoring: false,
            request_shape: shape,
            requests_per_minute: None,
            score_endpoint: None,
            timeout_secs: 5,
            retry_base_ms: 1,
            max_tokens: 64,
        }
    }

    fn prompt() -> Prompt {
        let mut p = Prompt::new(Role::Listener);
        p.push_text(Turn::Harness, "Image A: ");
        let img = ImageRef::from_raster("x", image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3])));
        p.push_image(Turn::Harness, ImagePayload::Image(img));
        p.push_text(Turn::Harness, "\nWhich one?");
        p.push_text(Turn::Agent, "Image A");
        p.push_text(Turn::Harness, "Correct.");
        p
    }

    fn call(p: &Prompt) -> Call<'_> {
        Call {
            role: Role::Listener,
            trial_index: 1,
            prompt: p,
            labels: &[],
            message: None,
            history: &[],
            decode: Decode::default(),
        }
    }

    const OPENAI_OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Image C"}}]}"#;

    #[test]
    fn openai_shape_round_trip() {
        let (url, rx) = serve(vec![(200, OPENAI_OK.into())]);
        let mut agent = HttpAgent::new(config(&url, RequestShape::OpenaiChat));
        let p = prompt();
        let r = complete(&mut agent, &call(&p)).unwrap();
        assert_eq!(r.text, "Image C");
        let (_, body) = rx.recv().unwrap();
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["model"], "m");
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[0]["role"], "user");
        assert_eq!(msgs[1]["role"], "assistant");
        let url = msgs[0]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn anthropic_shape_and_auth_header() {
        let body = r#"{"content":[{"type":"text","text":"Image "},{"type":"text","text":"B"}]}"#;
        let (url, rx) = serve(vec![(200, body.into())]);
        let mut cfg = config(&url, RequestShape::AnthropicMessages);
        cfg.auth_env = Some("ICCA_TEST_ADAPTER_KEY".into());
        std::env::set_var("ICCA_TEST_ADAPTER_KEY", "sekret");
        let mut agent = HttpAgent::new(cfg);
        let p = prompt();
        assert_eq!(complete(&mut agent, &call(&p)).unwrap().text, "Image B");
        let (headers, body) = rx.recv().unwrap();
        assert!(headers.contains("x-api-key: sekret"), "{headers}");
        assert_eq!(body["messages"][0]["content"][1]["source"]["media_type"], "image/png");
    }

    #[test]
    fn transient_errors_are_retried() {
        let (url, rx) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, OPENAI_OK.into()),
        ]);
        let mut agent = HttpAgent::new(config(&url, RequestShape::OpenaiChat));
        let p = prompt();
        assert_eq!(complete(&mut agent, &call(&p)).unwrap().text, "Image C");
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn retries_are_bounded() {
        let (url, _rx) = serve(vec![(500, "{}".into()); 3]);
        let mut agent = HttpAgent::new(config(&url, RequestShape::OpenaiChat));
        let p = prompt();
        let err = complete(&mut agent, &call(&p)).unwrap_err();
        assert!(matches!(err, AgentError::Transport { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, rx) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let mut agent = HttpAgent::new(config(&url, RequestShape::OpenaiChat));
        let p = prompt();
        let err = complete(&mut agent, &call(&p)).unwrap_err();
        assert!(matches!(err, AgentError::Protocol(_)), "{err}");
        assert_eq!(rx.try_iter().count(), 1);
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let mut agent = HttpAgent::new(config("http://127.0.0.1:1/v1", RequestShape::OpenaiChat));
        let p = prompt();
        let err = complete(&mut agent, &call(&p)).unwrap_err();
        assert!(matches!(err, AgentError::Transport { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn image_cap_refuses_before_sending() {
        let mut cfg = config("http://127.0.0.1:1/v1", RequestShape::OpenaiChat);
        cfg.max_images = Some(0);
        cfg.supports_images = false;
        let mut agent = HttpAgent::new(cfg);
        let p = prompt();
        assert!(matches!(complete(&mut agent, &call(&p)), Err(AgentError::Capability(_))));
    }

    #[test]
    fn scoring_endpoint() {
        let body = r#"{"tokens":[{"token":"red","logprob":-0.5},{"token":"kite","logprob":-1.5}]}"#;
        let (url, rx) = serve(vec![(200, body.into())]);
        let mut cfg = config("http://127.0.0.1:1/unused", RequestShape::OpenaiChat);
        cfg.supports_scoring = true;
        cfg.score_endpoint = Some(url);
        let mut agent = HttpAgent::new(cfg);
        let s = score_text(&mut agent, &prompt(), "red kite").unwrap();
        assert_eq!((s.logprob, s.tokens), (-2.0, 2));
        let (_, sent) = rx.recv().unwrap();
        assert_eq!(sent["continuation"], "red kite");
    }

    #[test]
    fn config_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("small16.json"),
            r#"{"name":"small16","endpoint":"http://x","max_images":16,"request_shape":"openai_chat"}"#,
        )
        .unwrap();
        let cfg = AdapterConfig::load_named(dir.path(), "small16").unwrap();
        assert_eq!(cfg.capability().image_limit(), 16);
        assert!(AdapterConfig::load_named(dir.path(), "absent").is_err());
        std::fs::write(
            dir.path().join("typo.json"),
            r#"{"name":"t","endpoint":"http://x","request_shape":"openai_chat","max_image":4}"#,
        )
        .unwrap();
        assert!(matches!(AdapterConfig::load_named(dir.path(), "typo"), Err(AgentError::Config(_))));
        std::fs::write(
            dir.path().join("noscore.json"),
            r#"{"name":"t","endpoint":"http://x","request_shape":"openai_chat","supports_scoring":true}"#,
        )
        .unwrap();
        assert!(AdapterConfig::load_named(dir.path(), "noscore").is_err());
    }

    #[test]
    fn rate_limit_spaces_requests() {
        let (url, _rx) = serve(vec![(200, OPENAI_OK.into()), (200, OPENAI_OK.into())]);
        let mut cfg = config(&url, RequestShape::OpenaiChat);
        cfg.requests_per_minute = Some(600);
        let mut agent = HttpAgent::new(cfg);
        let p = prompt();
        let start = Instant::now();
        complete(&mut agent, &call(&p)).unwrap();
        complete(&mut agent, &call(&p)).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(100));
    }
}
