//! Prompt registry. The stored texts are used byte-for-byte; nothing is
//! trimmed or templated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;

/// Caption-task instruction for the locally hosted vision-language model.
pub const VLM_INSTRUCTION: &str = include_str!("../prompts/describe_en.txt");
/// Instruction sent to the commercial chat model.
pub const COMMERCIAL_PROMPT: &str = include_str!("../prompts/commercial_llm.txt");
/// Token that precedes the instruction in the local model's input.
pub const IMAGE_TOKEN: &str = "<image>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown provider kind `{0}`")]
pub struct UnknownProvider(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    VlmLocal,
    CommercialLlm,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::VlmLocal => "vlm_local",
            ProviderKind::CommercialLlm => "commercial_llm",
            ProviderKind::Mock => "mock",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = UnknownProvider;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vlm_local" => Ok(ProviderKind::VlmLocal),
            "commercial_llm" => Ok(ProviderKind::CommercialLlm),
            "mock" => Ok(ProviderKind::Mock),
            other => Err(UnknownProvider(other.to_string())),
        }
    }
}

/// Which prompt a provider receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    VlmLocal,
    CommercialLlm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub style: PromptStyle,
    pub text: String,
}

impl PromptSpec {
    /// Text as the model sees it. The local model gets the image token first.
    pub fn model_input(&self) -> String {
        match self.style {
            PromptStyle::VlmLocal => format!("{IMAGE_TOKEN}{}", self.text),
            PromptStyle::CommercialLlm => self.text.clone(),
        }
    }

    /// Digest that keys the caption cache, so prompt edits invalidate old captions.
    pub fn hash(&self) -> String {
        sha256_hex(self.model_input().as_bytes())
    }
}

pub fn build_prompt(style: PromptStyle) -> PromptSpec {
    let text = match style {
        PromptStyle::VlmLocal => VLM_INSTRUCTION,
        PromptStyle::CommercialLlm => COMMERCIAL_PROMPT,
    };
    PromptSpec {
        style,
        text: text.to_string(),
    }
}

/// Resolves a provider kind name to its prompt. Mocks stand in for the local model.
pub fn build_prompt_for(kind: &str) -> Result<PromptSpec, UnknownProvider> {
    Ok(build_prompt(match kind.parse::<ProviderKind>()? {
        ProviderKind::VlmLocal | ProviderKind::Mock => PromptStyle::VlmLocal,
        ProviderKind::CommercialLlm => PromptStyle::CommercialLlm,
    }))
}
