//! Scene description from a remote vision-language model behind an
//! OpenAI-style chat-completions endpoint.
//!
//! The frame travels as a base64 binary PPM inside a data URL, so no image
//! codec is needed on either side.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::framework::{OptionsError, ProcessOutput, Processor, ProcessorError, ProcessorOptions, Utterance};
use crate::model::{truncate_utf8, Frame, PixelFormat, MAX_DESCRIPTION_BYTES};

pub const DEFAULT_PROMPT: &str = "Describe this scene for a blind user in one sentence.";
pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const MIN_TIMEOUT_MS: u64 = 100;
pub const UNAVAILABLE: &str = "description service unavailable";
pub const PPM_MEDIA_TYPE: &str = "image/x-portable-pixmap";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VlmConfig {
    /// Base URL; `/v1/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub prompt: String,
    pub timeout_ms: u64,
    /// Sent as `Authorization: Bearer ...` when present.
    pub bearer_token: Option<String>,
}

impl Default for VlmConfig {
    fn default() -> Self {
        VlmConfig {
            endpoint: String::new(),
            model: "mock-vlm".to_owned(),
            prompt: DEFAULT_PROMPT.to_owned(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            bearer_token: None,
        }
    }
}

impl VlmConfig {
    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

/// Binary PPM (P6, maxval 255). Gray frames are expanded to RGB.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + frame.width() as usize * frame.height() as usize * 3);
    out.extend_from_slice(header.as_bytes());
    match frame.format() {
        PixelFormat::Rgb8 => out.extend_from_slice(frame.pixels()),
        PixelFormat::Gray8 => {
            for &v in frame.pixels() {
                out.extend_from_slice(&[v, v, v]);
            }
        }
    }
    out
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: [ContentPart<'a>; 2],
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Serialize)]
struct ImageUrl {
    url: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// The exact JSON body sent for one frame.
pub fn request_body(model: &str, prompt: &str, frame: &Frame) -> Vec<u8> {
    let b64 = base64::engine::general_purpose::STANDARD.encode(encode_ppm(frame));
    let req = ChatRequest {
        model,
        messages: [ChatMessage {
            role: "user",
            content: [
                ContentPart::Text { text: prompt },
                ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: format!("data:{PPM_MEDIA_TYPE};base64,{b64}"),
                    },
                },
            ],
        }],
    };
    serde_json::to_vec(&req).expect("request serializes")
}

/// Content of the first choice, if the body is a chat-completions response.
pub fn parse_response(body: &str) -> Option<String> {
    let resp: ChatResponse = serde_json::from_str(body).ok()?;
    resp.choices.into_iter().next()?.message.content
}

pub struct RemoteVlm {
    config: Arc<VlmConfig>,
    model: String,
    prompt: String,
    agent: ureq::Agent,
    errors: Arc<AtomicU64>,
}

impl RemoteVlm {
    pub const OPTION_KEYS: &'static [&'static str] = &["prompt", "model"];

    /// Builds an instance; `errors` is incremented on every failed call.
    pub fn new(config: Arc<VlmConfig>, opts: &ProcessorOptions, errors: Arc<AtomicU64>) -> Result<Self, OptionsError> {
        if config.endpoint.is_empty() {
            return Err(OptionsError::invalid("endpoint", "no description service endpoint configured"));
        }
        let prompt = opts.get("prompt").unwrap_or(&config.prompt).to_owned();
        if prompt.trim().is_empty() {
            return Err(OptionsError::invalid("prompt", "empty prompt"));
        }
        let model = opts.get("model").unwrap_or(&config.model).to_owned();
        if model.is_empty() {
            return Err(OptionsError::invalid("model", "empty model name"));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms.max(MIN_TIMEOUT_MS))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteVlm {
            config,
            model,
            prompt,
            agent,
            errors,
        })
    }

    fn call(&self, body: Vec<u8>) -> Result<Option<String>, String> {
        let mut req = self
            .agent
            .post(&self.config.completions_url())
            .header("Content-Type", "application/json");
        if let Some(token) = &self.config.bearer_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(&body[..]).map_err(|e| e.to_string())?;
        if resp.status().as_u16() != 200 {
            return Err(format!("status {}", resp.status()));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        parse_response(&text).ok_or_else(|| "unexpected response shape".to_owned()).map(Some)
    }
}

impl Processor for RemoteVlm {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError> {
        let body = request_body(&self.model, &self.prompt, frame);
        let utterance = match self.call(body) {
            Ok(Some(content)) => {
                let text = truncate_utf8(&content, MAX_DESCRIPTION_BYTES);
                (!text.is_empty()).then(|| Utterance::routine(text))
            }
            Ok(None) => None,
            Err(reason) => {
                tracing::warn!(%reason, "description service call failed");
                self.errors.fetch_add(1, Ordering::Relaxed);
                Some(Utterance::interrupt(UNAVAILABLE))
            }
        };
        Ok(ProcessOutput {
            annotations: Vec::new(),
            utterance,
        })
    }
}
