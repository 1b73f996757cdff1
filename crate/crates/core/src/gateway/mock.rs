use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{CaptionProvider, CaptionRequest, ProviderFailure, ProviderReply};

/// Mock behaviour reachable from config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Caption template; `{frame_id}` is substituted.
    #[serde(default)]
    pub template: Option<String>,
    /// Frames that fail with a 503 on every attempt.
    #[serde(default)]
    pub fail_frames: Vec<String>,
    #[serde(default)]
    pub delay_ms: u64,
}

/// Call counters shared between a mock and the test that owns it.
#[derive(Debug, Default)]
pub struct MockStats {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockStats {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(stats)
    }
}

// Timeouts drop the call future mid-flight, so the count is released on drop.
impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

enum Responder {
    Template(String),
    /// Echoes `frame_id`, a newline, then the prompt exactly as sent.
    Echo,
    /// Replies in order; the last one repeats.
    Script(Mutex<Vec<Result<String, ProviderFailure>>>),
    /// Per-frame scripts, for fault plans that depend on the frame.
    PerFrame(Mutex<HashMap<String, Vec<Result<String, ProviderFailure>>>>, String),
}

pub struct MockProvider {
    responder: Responder,
    fail_frames: HashSet<String>,
    delay: Duration,
    stats: Arc<MockStats>,
}

impl MockProvider {
    fn with(responder: Responder) -> Self {
        Self {
            responder,
            fail_frames: HashSet::new(),
            delay: Duration::ZERO,
            stats: Arc::new(MockStats::default()),
        }
    }

    pub fn canned(text: impl Into<String>) -> Self {
        Self::with(Responder::Template(text.into()))
    }

    pub fn echo() -> Self {
        Self::with(Responder::Echo)
    }

    pub fn scripted(replies: Vec<Result<String, ProviderFailure>>) -> Self {
        assert!(!replies.is_empty(), "script needs at least one reply");
        let mut replies = replies;
        replies.reverse();
        Self::with(Responder::Script(Mutex::new(replies)))
    }

    /// Frames listed in `scripts` follow their script; all others get `fallback`.
    pub fn per_frame(
        scripts: HashMap<String, Vec<Result<String, ProviderFailure>>>,
        fallback: impl Into<String>,
    ) -> Self {
        let scripts = scripts
            .into_iter()
            .map(|(k, mut v)| {
                v.reverse();
                (k, v)
            })
            .collect();
        Self::with(Responder::PerFrame(Mutex::new(scripts), fallback.into()))
    }

    pub fn from_config(cfg: MockConfig) -> Self {
        let template = cfg
            .template
            .unwrap_or_else(|| "Embryo in frame {frame_id}; morphology within normal limits.".to_string());
        Self::canned(template)
            .failing_on(cfg.fail_frames)
            .with_delay(Duration::from_millis(cfg.delay_ms))
    }

    pub fn failing_on(mut self, frames: impl IntoIterator<Item = String>) -> Self {
        self.fail_frames.extend(frames);
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn stats(&self) -> Arc<MockStats> {
        self.stats.clone()
    }

    fn respond(&self, request: &CaptionRequest) -> Result<String, ProviderFailure> {
        if self.fail_frames.contains(&request.frame_id) {
            return Err(ProviderFailure::Status {
                status: 503,
                body: "injected fault".into(),
            });
        }
        fn next(script: &mut Vec<Result<String, ProviderFailure>>) -> Result<String, ProviderFailure> {
            if script.len() > 1 {
                script.pop().expect("nonempty")
            } else {
                script[0].clone()
            }
        }
        match &self.responder {
            Responder::Template(t) => Ok(t.replace("{frame_id}", &request.frame_id)),
            Responder::Echo => Ok(format!("{}\n{}", request.frame_id, request.prompt.model_input())),
            Responder::Script(script) => next(&mut script.lock().expect("mock lock")),
            Responder::PerFrame(scripts, fallback) => {
                match scripts.lock().expect("mock lock").get_mut(&request.frame_id) {
                    Some(script) => next(script),
                    None => Ok(fallback.replace("{frame_id}", &request.frame_id)),
                }
            }
        }
    }
}

#[async_trait]
impl CaptionProvider for MockProvider {
    async fn caption(&self, request: &CaptionRequest) -> Result<ProviderReply, ProviderFailure> {
        self.stats.calls.fetch_add(1, Ordering::SeqCst);
        let _guard = InFlight::enter(&self.stats);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        self.respond(request).map(|text| ProviderReply {
            text,
            model_version: Some("mock-1".into()),
        })
    }
}
