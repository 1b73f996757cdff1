//! Pipeline configuration file (TOML). See `docs/config.md`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use embryocap::gateway::ProviderConfig;
use embryocap::report::ReportFormat;
use embryocap::sessions::DEFAULT_CALIBRATION_COUNT;
use embryocap::{MetricWeights, StratifyBy};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
#[error("{path}: {field}: {message}")]
pub struct ConfigError {
    pub path: PathBuf,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Directory every artifact is written to, relative to the config file.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub weights: Option<MetricWeights>,
    #[serde(default)]
    pub models: Vec<ModelSection>,
    #[serde(default)]
    pub session: SessionSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory image paths in the source table are relative to.
    pub root: PathBuf,
    /// Tab-separated source table with a header row.
    pub source: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    #[serde(default = "default_subsets")]
    pub subset_sizes: Vec<usize>,
    #[serde(default)]
    pub stratify_by: StratifyBy,
}

fn default_test_count() -> usize {
    100
}

fn default_subsets() -> Vec<usize> {
    vec![400, 700, 1000]
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_count: default_test_count(),
            subset_sizes: default_subsets(),
            stratify_by: StratifyBy::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelSection {
    pub id: String,
    #[serde(flatten)]
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    #[serde(default = "default_session_id")]
    pub id: String,
    /// Test frames drawn into the session; all of them when absent.
    #[serde(default)]
    pub frame_count: Option<usize>,
    #[serde(default = "default_calibration")]
    pub calibration_count: usize,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Environment variable holding the administrator token.
    #[serde(default = "default_admin_env")]
    pub admin_token_env: String,
    /// Optional directory of static files (the rater web app) served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub raters: Vec<RaterSection>,
}

fn default_session_id() -> String {
    "main".into()
}

fn default_calibration() -> usize {
    DEFAULT_CALIBRATION_COUNT
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_admin_env() -> String {
    "EMBRYOCAP_ADMIN_TOKEN".into()
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            id: default_session_id(),
            frame_count: None,
            calibration_count: default_calibration(),
            bind: default_bind(),
            admin_token_env: default_admin_env(),
            static_dir: None,
            raters: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterSection {
    pub id: String,
    /// Environment variable holding this rater's bearer token.
    pub token_env: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_decimals")]
    pub decimals: usize,
    #[serde(default = "default_formats")]
    pub formats: BTreeSet<ReportFormat>,
    /// Row/column order; the `[[models]]` order when absent.
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

fn default_decimals() -> usize {
    2
}

fn default_formats() -> BTreeSet<ReportFormat> {
    [ReportFormat::Markdown, ReportFormat::Tsv].into()
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            decimals: default_decimals(),
            formats: default_formats(),
            models: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |field: &str, message: String| ConfigError {
            path: path.to_path_buf(),
            field: field.to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err("<file>", e.to_string()))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| {
            let field = e
                .span()
                .map_or_else(|| "<root>".to_string(), |s| locate(&text, s.start));
            err(&field, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate().map_err(|(field, message)| err(&field, message))?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.dataset.root);
        fix(&mut self.dataset.source);
        if let Some(dir) = &mut self.session.static_dir {
            fix(dir);
        }
    }

    fn validate(&self) -> Result<(), (String, String)> {
        let mut seen = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if m.id.is_empty() || !seen.insert(m.id.as_str()) {
                return Err((
                    format!("models[{i}].id"),
                    format!("empty or duplicate model id `{}`", m.id),
                ));
            }
            m.provider
                .validate()
                .map_err(|e| (format!("models[{i}]"), e.to_string()))?;
        }
        let mut raters = BTreeSet::new();
        for (i, r) in self.session.raters.iter().enumerate() {
            if r.id.is_empty() || !raters.insert(r.id.as_str()) {
                return Err((
                    format!("session.raters[{i}].id"),
                    format!("empty or duplicate rater id `{}`", r.id),
                ));
            }
        }
        if let Some(order) = &self.report.models {
            for m in order {
                if !seen.contains(m.as_str()) {
                    return Err(("report.models".into(), format!("`{m}` is not a configured model")));
                }
            }
        }
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn report_models(&self) -> Vec<String> {
        self.report.models.clone().unwrap_or_else(|| self.model_ids())
    }

    pub fn weights(&self) -> MetricWeights {
        self.weights.unwrap_or_default()
    }
}

/// Dotted key path of the table entry enclosing byte `offset`, best effort.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let table = before
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.starts_with('[')
                .then(|| l.trim_matches(|c| c == '[' || c == ']').to_string())
        })
        .unwrap_or_default();
    let line = text[offset.min(text.len())..].lines().next().unwrap_or("");
    let key = before
        .lines()
        .last()
        .filter(|l| l.contains('='))
        .or(Some(line))
        .and_then(|l| l.split('=').next())
        .map(str::trim)
        .unwrap_or("");
    match (table.is_empty(), key.is_empty() || key.starts_with('[')) {
        (true, true) => "<root>".into(),
        (true, false) => key.into(),
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Fixed artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn ingested(&self) -> PathBuf {
        self.out.join("ingested.tsv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.tsv")
    }

    pub fn prepared(&self) -> PathBuf {
        self.out.join("prepared")
    }

    pub fn captions(&self) -> PathBuf {
        self.out.join("captions.jsonl")
    }

    pub fn caption_failures(&self) -> PathBuf {
        self.out.join("caption_failures.json")
    }

    pub fn sessions(&self) -> PathBuf {
        self.out.join("sessions.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.out.join("scores.json")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.out.join("aggregate.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    pub fn run_log(&self) -> PathBuf {
        self.out.join("run.log")
    }
}
