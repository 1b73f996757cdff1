pub mod artifact;
pub mod dataset;
pub mod gateway;
pub mod labels;
pub mod metric;
pub mod preprocess;
pub mod prompt;
pub mod report;
pub mod rng;
pub mod sessions;

pub use dataset::{FrameRecord, Manifest, Split, SplitSpec, StratifyBy, SubsetTag};
pub use labels::{EccLabel, MorphokineticVariable};
pub use metric::{
    aggregate_by_variable, aggregate_model, agreement, composite, AgreementSummary, ComponentScores, CompositeScore,
    Criterion, MetricError, MetricWeights, ModelSummary, ScoreRecord, VariableStat,
};
pub use preprocess::{prepare_image, PreparedImage};
pub use prompt::{build_prompt, PromptSpec, PromptStyle, ProviderKind};
pub use report::{render_per_model, render_per_variable, Report, ReportFormat, ReportKind, ReportSpec};
pub use sessions::{plan_session, Session, SessionError, SessionStore, WorkItemView};
