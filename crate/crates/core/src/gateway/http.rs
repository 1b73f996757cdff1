use std::time::Duration;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CaptionProvider, CaptionRequest, DecodeParams, GatewayError, ProviderFailure, ProviderReply};

/// Body POSTed to a caption model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: String,
    /// Base64 (standard alphabet, padded) PNG of the prepared 448×448 frame.
    pub image_b64: String,
    pub image_format: String,
    /// Prompt exactly as the model consumes it, image token included.
    pub prompt: String,
    pub decode: DecodeParams,
}

/// Successful reply from a caption model server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub caption: String,
    #[serde(default)]
    pub model_version: Option<String>,
}

impl WireRequest {
    pub fn from_request(request: &CaptionRequest) -> Self {
        Self {
            request_id: request.request_id.clone(),
            image_b64: BASE64.encode(request.image_png.as_slice()),
            image_format: "png".into(),
            prompt: request.prompt.model_input(),
            decode: request.decode,
        }
    }

    pub fn image_bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        BASE64.decode(&self.image_b64)
    }
}

fn client(timeout: Duration) -> Result<reqwest::Client, GatewayError> {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::Config(e.to_string()))
}

fn bearer(auth_env: Option<&str>) -> Result<Option<String>, ProviderFailure> {
    match auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| ProviderFailure::Misconfigured(format!("environment variable `{var}` is not set"))),
    }
}

fn transport(e: reqwest::Error) -> ProviderFailure {
    if e.is_timeout() {
        ProviderFailure::Timeout
    } else {
        ProviderFailure::Transport(e.to_string())
    }
}

async fn post_json(
    client: &reqwest::Client,
    endpoint: &str,
    auth_env: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderFailure> {
    let mut req = client.post(endpoint).json(body);
    if let Some(token) = bearer(auth_env)? {
        req = req.bearer_auth(token);
    }
    let resp = req.send().await.map_err(transport)?;
    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        return Err(ProviderFailure::Status {
            status: status.as_u16(),
            body: body.chars().take(500).collect(),
        });
    }
    resp.json()
        .await
        .map_err(|e| ProviderFailure::BadResponse(e.to_string()))
}

/// Client for a model server speaking the [`WireRequest`]/[`WireResponse`] contract.
pub struct VlmHttpProvider {
    client: reqwest::Client,
    endpoint: String,
    auth_env: Option<String>,
}

impl VlmHttpProvider {
    pub fn new(endpoint: String, auth_env: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: client(timeout)?,
            endpoint,
            auth_env,
        })
    }
}

#[async_trait]
impl CaptionProvider for VlmHttpProvider {
    async fn caption(&self, request: &CaptionRequest) -> Result<ProviderReply, ProviderFailure> {
        let body = serde_json::to_value(WireRequest::from_request(request)).expect("wire request serializes");
        let value = post_json(&self.client, &self.endpoint, self.auth_env.as_deref(), &body).await?;
        let reply: WireResponse =
            serde_json::from_value(value).map_err(|e| ProviderFailure::BadResponse(e.to_string()))?;
        Ok(ProviderReply {
            text: reply.caption,
            model_version: reply.model_version,
        })
    }
}

/// Client for a vendor chat-completions endpoint. The prompt goes in as the
/// text part of a single user message next to the image as a data URL.
pub struct ChatCompletionsProvider {
    client: reqwest::Client,
    endpoint: String,
    auth_env: Option<String>,
    model: String,
}

impl ChatCompletionsProvider {
    pub fn new(
        endpoint: String,
        auth_env: Option<String>,
        model: String,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        Ok(Self {
            client: client(timeout)?,
            endpoint,
            auth_env,
            model,
        })
    }

    pub fn body(&self, request: &CaptionRequest) -> serde_json::Value {
        let data_url = format!("data:image/png;base64,{}", BASE64.encode(request.image_png.as_slice()));
        json!({
            "model": self.model,
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt.model_input()},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        })
    }
}

#[async_trait]
impl CaptionProvider for ChatCompletionsProvider {
    async fn caption(&self, request: &CaptionRequest) -> Result<ProviderReply, ProviderFailure> {
        let value = post_json(
            &self.client,
            &self.endpoint,
            self.auth_env.as_deref(),
            &self.body(request),
        )
        .await?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ProviderFailure::BadResponse("missing choices[0].message.content".into()))?;
        Ok(ProviderReply {
            text: text.to_string(),
            model_version: value.get("model").and_then(|m| m.as_str()).map(str::to_string),
        })
    }
}
