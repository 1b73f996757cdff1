//! Blinded expert scoring sessions.
//!
//! A session plans, for every rater, one work item per `(frame, model)` pair
//! in a per-rater random order, preceded by a shared calibration round. Work
//! items carry opaque random ids; the item → model mapping never leaves the
//! server except through [`SessionStore::export`], which is audit-logged.
//! Main-round items unlock only after an administrator marks the calibration
//! round reconciled.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::artifact::{write_atomic, Provenance};
use crate::dataset::FrameRecord;
use crate::labels::{EccLabel, MorphokineticVariable};
use crate::metric::{composite, ComponentScores, CompositeScore, MetricWeights, ScoreRecord};
use crate::rng::SeededRng;

pub const DEFAULT_CALIBRATION_COUNT: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no caption for frame `{frame}` from model `{model}`")]
    MissingCaption { frame: String, model: String },
    #[error("invalid session plan: {0}")]
    InvalidPlan(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown work item `{0}`")]
    UnknownItem(String),
    #[error("work item `{item}` is not assigned to rater `{rater}`")]
    NotAssigned { item: String, rater: String },
    #[error("work item `{0}` was already scored by this rater")]
    DuplicateSubmission(String),
    #[error("work item `{0}` has not been scored yet")]
    NotSubmitted(String),
    #[error("main-round items are locked until the calibration round is reconciled")]
    PhaseLocked,
    #[error("calibration round still has {pending} unscored item(s)")]
    CalibrationIncomplete { pending: usize },
    #[error(transparent)]
    Invalid(#[from] crate::metric::MetricError),
    #[error("session store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Calibration,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Pending,
    Submitted,
}

/// Server-side work item. Never serialized to raters; see [`WorkItemView`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub item_id: String,
    pub rater_id: String,
    pub frame_id: String,
    pub hidden_model_id: String,
    pub phase: Phase,
    pub status: ItemStatus,
}

/// Labels of a planned frame, kept so exports need no manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame_id: String,
    pub ecc: EccLabel,
    pub mv: MorphokineticVariable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub rater_ids: Vec<String>,
    pub frame_ids: Vec<String>,
    pub model_ids: Vec<String>,
    pub calibration_count: usize,
    pub seed: u64,
    /// Calibration items first (same pairs and order for every rater), then
    /// each rater's shuffled main round.
    pub assignment: Vec<WorkItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub record_id: u64,
    pub item_id: String,
    pub rater_id: String,
    pub scores: ComponentScores,
    /// Recomputed on the server; anything a client sends is ignored.
    pub composite: CompositeScore,
    pub submitted_at: DateTime<Utc>,
    /// Earlier submission this one corrects.
    #[serde(default)]
    pub supersedes: Option<u64>,
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    pub action: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub plan: SessionPlan,
    pub frames: BTreeMap<String, FrameInfo>,
    /// Caption text per `(frame_id, model_id)`, as `frame_id\u{1f}model_id`.
    captions: BTreeMap<String, String>,
    pub weights: MetricWeights,
    pub calibration_reconciled: bool,
    pub submissions: Vec<Submission>,
    pub audit: Vec<AuditEntry>,
    /// How the plan was produced, when planned by the pipeline.
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

fn caption_key(frame: &str, model: &str) -> String {
    format!("{frame}\u{1f}{model}")
}

/// Picks `count` frames at random (seeded), returned in id order.
pub fn select_frames(frames: &[FrameRecord], count: usize, seed: u64) -> Vec<FrameRecord> {
    let mut sorted: Vec<&FrameRecord> = frames.iter().collect();
    sorted.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    SeededRng::new(seed).shuffle(&mut sorted);
    let mut picked: Vec<FrameRecord> = sorted.into_iter().take(count).cloned().collect();
    picked.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    picked
}

#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub session_id: &'a str,
    pub frames: &'a [FrameRecord],
    pub model_ids: &'a [String],
    pub rater_ids: &'a [String],
    pub calibration_count: usize,
    pub seed: u64,
    pub weights: MetricWeights,
}

/// Plans a session. `caption_for(frame, model)` must know every pair.
pub fn plan_session(
    req: &PlanRequest<'_>,
    caption_for: impl Fn(&str, &str) -> Option<String>,
) -> Result<Session, SessionError> {
    let invalid = |m: String| Err(SessionError::InvalidPlan(m));
    if req.frames.is_empty() || req.model_ids.is_empty() || req.rater_ids.is_empty() {
        return invalid("frames, models and raters must all be nonempty".into());
    }
    fn unique<'a>(mut xs: impl Iterator<Item = &'a str>) -> bool {
        let mut seen = HashSet::new();
        xs.all(|x| seen.insert(x))
    }
    if !unique(req.frames.iter().map(|f| f.frame_id.as_str()))
        || !unique(req.model_ids.iter().map(String::as_str))
        || !unique(req.rater_ids.iter().map(String::as_str))
    {
        return invalid("frame, model and rater ids must be unique".into());
    }
    let grid: Vec<(&str, &str)> = req
        .frames
        .iter()
        .flat_map(|f| req.model_ids.iter().map(move |m| (f.frame_id.as_str(), m.as_str())))
        .collect();
    if req.calibration_count > grid.len() {
        return invalid(format!(
            "calibration count {} exceeds the {} available captions",
            req.calibration_count,
            grid.len()
        ));
    }
    let mut captions = BTreeMap::new();
    for &(frame, model) in &grid {
        let text = caption_for(frame, model).ok_or_else(|| SessionError::MissingCaption {
            frame: frame.to_string(),
            model: model.to_string(),
        })?;
        captions.insert(caption_key(frame, model), text);
    }

    let mut rng = SeededRng::new(req.seed);
    let mut used_ids = HashSet::new();
    let mut fresh_id = |rng: &mut SeededRng| loop {
        let id = rng.token(8);
        if used_ids.insert(id.clone()) {
            break id;
        }
    };
    let item = |item_id: String, rater: &str, (frame, model): (&str, &str), phase| WorkItem {
        item_id,
        rater_id: rater.to_string(),
        frame_id: frame.to_string(),
        hidden_model_id: model.to_string(),
        phase,
        status: ItemStatus::Pending,
    };

    let mut calibration = grid.clone();
    rng.shuffle(&mut calibration);
    calibration.truncate(req.calibration_count);

    let mut assignment = Vec::with_capacity(req.rater_ids.len() * (grid.len() + calibration.len()));
    for rater in req.rater_ids {
        for &pair in &calibration {
            assignment.push(item(fresh_id(&mut rng), rater, pair, Phase::Calibration));
        }
    }
    for rater in req.rater_ids {
        let mut order = grid.clone();
        rng.shuffle(&mut order);
        for pair in order {
            assignment.push(item(fresh_id(&mut rng), rater, pair, Phase::Main));
        }
    }

    Ok(Session {
        plan: SessionPlan {
            session_id: req.session_id.to_string(),
            rater_ids: req.rater_ids.to_vec(),
            frame_ids: req.frames.iter().map(|f| f.frame_id.clone()).collect(),
            model_ids: req.model_ids.to_vec(),
            calibration_count: req.calibration_count,
            seed: req.seed,
            assignment,
        },
        frames: req
            .frames
            .iter()
            .map(|f| {
                (
                    f.frame_id.clone(),
                    FrameInfo {
                        frame_id: f.frame_id.clone(),
                        ecc: f.ecc,
                        mv: f.mv,
                    },
                )
            })
            .collect(),
        captions,
        weights: req.weights,
        calibration_reconciled: req.calibration_count == 0,
        submissions: Vec::new(),
        audit: Vec::new(),
        provenance: None,
    })
}

/// One level of a rubric scale.
#[derive(Debug, Clone, Serialize)]
pub struct RubricLevel {
    pub value: i64,
    pub label: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RubricCriterion {
    pub key: &'static str,
    pub name: &'static str,
    pub levels: Vec<RubricLevel>,
}

/// Scoring scales shown next to every item. Values map 1:1 onto
/// [`ComponentScores`] ranges.
pub fn rubric() -> Vec<RubricCriterion> {
    let lv = |value, label| RubricLevel { value, label };
    vec![
        RubricCriterion {
            key: "er",
            name: "Embryo recognition",
            levels: vec![lv(0, "not recognized (whole caption scores 0)"), lv(1, "recognized")],
        },
        RubricCriterion {
            key: "ecc",
            name: "Embryonic cell cycle",
            levels: vec![
                lv(0, "incorrect"),
                lv(1, "not described"),
                lv(2, "partially correct or ambiguous"),
                lv(3, "correct"),
            ],
        },
        RubricCriterion {
            key: "md",
            name: "Morphological details",
            levels: vec![
                lv(0, "incorrect"),
                lv(1, "not described"),
                lv(2, "partially correct"),
                lv(3, "largely correct, minor errors"),
                lv(4, "entirely correct"),
            ],
        },
        RubricCriterion {
            key: "pd",
            name: "Positional details",
            levels: vec![
                lv(-1, "not applicable"),
                lv(0, "incorrect"),
                lv(1, "not described"),
                lv(2, "partially correct"),
                lv(3, "correct"),
            ],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub calibration_submitted: usize,
    pub calibration_total: usize,
    pub main_submitted: usize,
    pub main_total: usize,
    pub calibration_reconciled: bool,
}

/// What a rater sees for one item. Carries no model identity.
#[derive(Debug, Clone, Serialize)]
pub struct WorkItemView {
    pub item_id: String,
    pub phase: Phase,
    pub frame_id: String,
    pub image_url: String,
    pub caption: String,
    pub rubric: Vec<RubricCriterion>,
    pub progress: Progress,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NextItem {
    Item(WorkItemView),
    /// Calibration done; waiting for the administrator to reconcile it.
    AwaitingReconciliation {
        progress: Progress,
    },
    Complete {
        progress: Progress,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmitAck {
    pub item_id: String,
    pub status: ItemStatus,
    pub progress: Progress,
}

/// Submitted/pending/planned counts for a whole session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub planned: usize,
    pub submitted: usize,
    pub pending: usize,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.plan.session_id
    }

    pub fn caption(&self, frame: &str, model: &str) -> Option<&str> {
        self.captions.get(&caption_key(frame, model)).map(String::as_str)
    }

    pub fn item(&self, item_id: &str) -> Option<&WorkItem> {
        self.plan.assignment.iter().find(|i| i.item_id == item_id)
    }

    fn item_mut(&mut self, item_id: &str) -> Option<&mut WorkItem> {
        self.plan.assignment.iter_mut().find(|i| i.item_id == item_id)
    }

    pub fn items_for<'a>(&'a self, rater: &'a str) -> impl Iterator<Item = &'a WorkItem> + 'a {
        self.plan.assignment.iter().filter(move |i| i.rater_id == rater)
    }

    pub fn counts(&self) -> Counts {
        let submitted = self
            .plan
            .assignment
            .iter()
            .filter(|i| i.status == ItemStatus::Submitted)
            .count();
        Counts {
            planned: self.plan.assignment.len(),
            submitted,
            pending: self.plan.assignment.len() - submitted,
        }
    }

    pub fn progress(&self, rater: &str) -> Progress {
        let mut p = Progress {
            calibration_submitted: 0,
            calibration_total: 0,
            main_submitted: 0,
            main_total: 0,
            calibration_reconciled: self.calibration_reconciled,
        };
        for i in self.items_for(rater) {
            let done = (i.status == ItemStatus::Submitted) as usize;
            match i.phase {
                Phase::Calibration => {
                    p.calibration_total += 1;
                    p.calibration_submitted += done;
                }
                Phase::Main => {
                    p.main_total += 1;
                    p.main_submitted += done;
                }
            }
        }
        p
    }

    pub fn next_item(&self, rater: &str, image_url: impl Fn(&WorkItem) -> String) -> NextItem {
        let progress = self.progress(rater);
        let pending = |phase| {
            self.items_for(rater)
                .find(|i| i.phase == phase && i.status == ItemStatus::Pending)
        };
        let item = match pending(Phase::Calibration) {
            Some(i) => i,
            None if !self.calibration_reconciled => {
                return if progress.main_total == 0 && progress.calibration_total == 0 {
                    NextItem::Complete { progress }
                } else {
                    NextItem::AwaitingReconciliation { progress }
                };
            }
            None => match pending(Phase::Main) {
                Some(i) => i,
                None => return NextItem::Complete { progress },
            },
        };
        NextItem::Item(WorkItemView {
            item_id: item.item_id.clone(),
            phase: item.phase,
            frame_id: item.frame_id.clone(),
            image_url: image_url(item),
            caption: self
                .caption(&item.frame_id, &item.hidden_model_id)
                .unwrap_or_default()
                .to_string(),
            rubric: rubric(),
            progress,
        })
    }

    fn next_record_id(&self) -> u64 {
        self.submissions.iter().map(|s| s.record_id).max().map_or(1, |m| m + 1)
    }

    pub fn submit(&mut self, item_id: &str, rater: &str, scores: ComponentScores) -> Result<Submission, SessionError> {
        let reconciled = self.calibration_reconciled;
        let item = self
            .item(item_id)
            .ok_or_else(|| SessionError::UnknownItem(item_id.to_string()))?;
        if item.rater_id != rater {
            return Err(SessionError::NotAssigned {
                item: item_id.to_string(),
                rater: rater.to_string(),
            });
        }
        if item.status == ItemStatus::Submitted {
            return Err(SessionError::DuplicateSubmission(item_id.to_string()));
        }
        if item.phase == Phase::Main && !reconciled {
            return Err(SessionError::PhaseLocked);
        }
        let submission = Submission {
            record_id: self.next_record_id(),
            item_id: item_id.to_string(),
            rater_id: rater.to_string(),
            scores,
            composite: composite(&scores, &self.weights),
            submitted_at: Utc::now(),
            supersedes: None,
            reason: None,
        };
        self.item_mut(item_id).expect("item exists").status = ItemStatus::Submitted;
        self.submissions.push(submission.clone());
        Ok(submission)
    }

    /// Records a correction as a new submission linked to the one it replaces.
    pub fn correct(
        &mut self,
        item_id: &str,
        rater: &str,
        scores: ComponentScores,
        reason: &str,
    ) -> Result<Submission, SessionError> {
        let item = self
            .item(item_id)
            .ok_or_else(|| SessionError::UnknownItem(item_id.to_string()))?;
        if item.rater_id != rater {
            return Err(SessionError::NotAssigned {
                item: item_id.to_string(),
                rater: rater.to_string(),
            });
        }
        let previous = self
            .latest_submission(item_id)
            .ok_or_else(|| SessionError::NotSubmitted(item_id.to_string()))?
            .record_id;
        let submission = Submission {
            record_id: self.next_record_id(),
            item_id: item_id.to_string(),
            rater_id: rater.to_string(),
            scores,
            composite: composite(&scores, &self.weights),
            submitted_at: Utc::now(),
            supersedes: Some(previous),
            reason: Some(reason.to_string()),
        };
        self.audit(
            "correct",
            format!("record {} supersedes {previous}: {reason}", submission.record_id),
        );
        self.submissions.push(submission.clone());
        Ok(submission)
    }

    /// Submission at the head of an item's correction chain.
    pub fn latest_submission(&self, item_id: &str) -> Option<&Submission> {
        let superseded: BTreeSet<u64> = self.submissions.iter().filter_map(|s| s.supersedes).collect();
        self.submissions
            .iter()
            .filter(|s| s.item_id == item_id && !superseded.contains(&s.record_id))
            .max_by_key(|s| s.record_id)
    }

    pub fn reconcile_calibration(&mut self) -> Result<(), SessionError> {
        let pending = self
            .plan
            .assignment
            .iter()
            .filter(|i| i.phase == Phase::Calibration && i.status == ItemStatus::Pending)
            .count();
        if pending > 0 {
            return Err(SessionError::CalibrationIncomplete { pending });
        }
        if !self.calibration_reconciled {
            self.calibration_reconciled = true;
            self.audit("reconcile", "calibration round marked reconciled".into());
        }
        Ok(())
    }

    fn audit(&mut self, action: &str, detail: String) {
        self.audit.push(AuditEntry {
            at: Utc::now(),
            action: action.to_string(),
            detail,
        });
    }

    /// Unblinded main-round records (latest correction per item).
    pub fn main_records(&self) -> Vec<ScoreRecord> {
        self.records_for(Phase::Main)
    }

    pub fn records_for(&self, phase: Phase) -> Vec<ScoreRecord> {
        self.plan
            .assignment
            .iter()
            .filter(|i| i.phase == phase && i.status == ItemStatus::Submitted)
            .filter_map(|item| {
                let s = self.latest_submission(&item.item_id)?;
                let frame = &self.frames[&item.frame_id];
                Some(ScoreRecord {
                    frame_id: item.frame_id.clone(),
                    model_id: item.hidden_model_id.clone(),
                    rater_id: item.rater_id.clone(),
                    ecc_label: frame.ecc,
                    mv: frame.mv,
                    scores: s.scores,
                    composite: s.composite,
                })
            })
            .collect()
    }
}

/// All sessions, optionally persisted as one JSON document that is rewritten
/// atomically after every change.
#[derive(Debug, Default)]
pub struct SessionStore {
    path: Option<PathBuf>,
    sessions: BTreeMap<String, Session>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    kind: String,
    format_version: u32,
    sessions: BTreeMap<String, Session>,
}

const STORE_KIND: &str = "embryocap-session-store";

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, SessionError> {
        let sessions = if path.exists() {
            let bytes = std::fs::read(path).map_err(|e| SessionError::Store(e.to_string()))?;
            let file: StoreFile = serde_json::from_slice(&bytes).map_err(|e| SessionError::Store(e.to_string()))?;
            if file.kind != STORE_KIND {
                return Err(SessionError::Store(format!(
                    "`{}` is not a session store",
                    path.display()
                )));
            }
            file.sessions
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path.to_path_buf()),
            sessions,
        })
    }

    fn persist(&self) -> Result<(), SessionError> {
        let Some(path) = &self.path else { return Ok(()) };
        let file = StoreFile {
            kind: STORE_KIND.into(),
            format_version: crate::artifact::FORMAT_VERSION,
            sessions: self.sessions.clone(),
        };
        let bytes = serde_json::to_vec(&file).expect("session store serializes");
        write_atomic(path, &bytes).map_err(|e| SessionError::Store(e.to_string()))
    }

    pub fn insert(&mut self, session: Session) -> Result<(), SessionError> {
        if self.sessions.contains_key(session.id()) {
            return Err(SessionError::SessionExists(session.id().to_string()));
        }
        self.sessions.insert(session.id().to_string(), session);
        self.persist()
    }

    pub fn get(&self, session_id: &str) -> Result<&Session, SessionError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    fn with_session<T>(
        &mut self,
        session_id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, SessionError> {
        let session = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))?;
        let out = f(session)?;
        self.persist()?;
        Ok(out)
    }

    pub fn submit(
        &mut self,
        session_id: &str,
        item_id: &str,
        rater: &str,
        scores: ComponentScores,
    ) -> Result<Submission, SessionError> {
        self.with_session(session_id, |s| s.submit(item_id, rater, scores))
    }

    pub fn correct(
        &mut self,
        session_id: &str,
        item_id: &str,
        rater: &str,
        scores: ComponentScores,
        reason: &str,
    ) -> Result<Submission, SessionError> {
        self.with_session(session_id, |s| s.correct(item_id, rater, scores, reason))
    }

    pub fn reconcile_calibration(&mut self, session_id: &str) -> Result<(), SessionError> {
        self.with_session(session_id, |s| s.reconcile_calibration())
    }

    /// Unblinded main-round records. Every call is appended to the audit log.
    pub fn export(&mut self, session_id: &str, requested_by: &str) -> Result<Vec<ScoreRecord>, SessionError> {
        self.with_session(session_id, |s| {
            let records = s.main_records();
            s.audit(
                "export",
                format!("{} record(s) exported by {requested_by}", records.len()),
            );
            Ok(records)
        })
    }
}
