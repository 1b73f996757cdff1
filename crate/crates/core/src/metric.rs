//! Expert-scored caption quality metric.
//!
//! A caption is judged on four criteria: embryo recognition (`er`, a gate),
//! embryonic cell cycle correctness (`ecc`), morphological detail (`md`) and
//! positional detail (`pd`, where `-1` means positional information does not
//! apply). The composite is a weighted mean of the normalized criteria and is
//! evaluated in exact rational arithmetic; floating point only appears when a
//! value leaves this module.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::labels::{EccLabel, MorphokineticVariable};

pub const ER_MAX: i64 = 1;
pub const ECC_MAX: i64 = 3;
pub const MD_MAX: i64 = 4;
pub const PD_MAX: i64 = 3;
/// `pd` value recorded when a caption makes no positional claim that could be judged.
pub const PD_NOT_APPLICABLE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Er,
    Ecc,
    Md,
    Pd,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Er, Criterion::Ecc, Criterion::Md, Criterion::Pd];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Er => "er",
            Criterion::Ecc => "ecc",
            Criterion::Md => "md",
            Criterion::Pd => "pd",
        }
    }

    /// Closed range of admissible values.
    pub fn range(self) -> (i64, i64) {
        match self {
            Criterion::Er => (0, ER_MAX),
            Criterion::Ecc => (0, ECC_MAX),
            Criterion::Md => (0, MD_MAX),
            Criterion::Pd => (PD_NOT_APPLICABLE, PD_MAX),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("{field} score {value} is out of range")]
    OutOfRange { field: Criterion, value: i64 },
    #[error("weight {name} must be strictly positive, got {value}")]
    NonPositiveWeight { name: &'static str, value: String },
    #[error("malformed weight `{0}` (expected an integer or `p/q`)")]
    MalformedWeight(String),
    #[error("no score records to aggregate")]
    EmptyCohort,
    #[error("no score records with applicable positional detail")]
    EmptyPdCohort,
    #[error("record for model `{found}` passed to the aggregate of `{expected}`")]
    ForeignRecord { expected: String, found: String },
    #[error("unpaired score records: {0}")]
    UnpairedRecords(String),
}

/// One rater's judgment of one caption. Construction validates every field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawComponents", into = "RawComponents")]
pub struct ComponentScores {
    er: i64,
    ecc: i64,
    md: i64,
    pd: i64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawComponents {
    er: i64,
    ecc: i64,
    md: i64,
    pd: i64,
}

impl TryFrom<RawComponents> for ComponentScores {
    type Error = MetricError;

    fn try_from(raw: RawComponents) -> Result<Self, Self::Error> {
        ComponentScores::new(raw.er, raw.ecc, raw.md, raw.pd)
    }
}

impl From<ComponentScores> for RawComponents {
    fn from(s: ComponentScores) -> Self {
        RawComponents {
            er: s.er,
            ecc: s.ecc,
            md: s.md,
            pd: s.pd,
        }
    }
}

impl ComponentScores {
    /// Validates a raw `(er, ecc, md, pd)` quadruple. Values are never clamped.
    pub fn new(er: i64, ecc: i64, md: i64, pd: i64) -> Result<Self, MetricError> {
        for (field, value) in [
            (Criterion::Er, er),
            (Criterion::Ecc, ecc),
            (Criterion::Md, md),
            (Criterion::Pd, pd),
        ] {
            let (lo, hi) = field.range();
            if value < lo || value > hi {
                return Err(MetricError::OutOfRange { field, value });
            }
        }
        Ok(Self { er, ecc, md, pd })
    }

    pub fn er(&self) -> i64 {
        self.er
    }

    pub fn ecc(&self) -> i64 {
        self.ecc
    }

    pub fn md(&self) -> i64 {
        self.md
    }

    pub fn pd(&self) -> i64 {
        self.pd
    }

    pub fn get(&self, criterion: Criterion) -> i64 {
        match criterion {
            Criterion::Er => self.er,
            Criterion::Ecc => self.ecc,
            Criterion::Md => self.md,
            Criterion::Pd => self.pd,
        }
    }

    pub fn pd_applicable(&self) -> bool {
        self.pd >= 0
    }

    /// Every valid tuple, 2 × 4 × 5 × 5 = 200 of them.
    pub fn all() -> impl Iterator<Item = ComponentScores> {
        (0..=ER_MAX).flat_map(|er| {
            (0..=ECC_MAX).flat_map(move |ecc| {
                (0..=MD_MAX)
                    .flat_map(move |md| (PD_NOT_APPLICABLE..=PD_MAX).map(move |pd| ComponentScores { er, ecc, md, pd }))
            })
        })
    }
}

/// Convenience wrapper matching the raw-quadruple entry point.
pub fn validate_components(raw: (i64, i64, i64, i64)) -> Result<ComponentScores, MetricError> {
    ComponentScores::new(raw.0, raw.1, raw.2, raw.3)
}

/// Weights of the ECC, MD and PD terms. The component maxima are constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct MetricWeights {
    alpha: Ratio<i64>,
    beta: Ratio<i64>,
    gamma: Ratio<i64>,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            alpha: Ratio::from_integer(4),
            beta: Ratio::from_integer(2),
            gamma: Ratio::from_integer(1),
        }
    }
}

impl MetricWeights {
    pub fn new(alpha: Ratio<i64>, beta: Ratio<i64>, gamma: Ratio<i64>) -> Result<Self, MetricError> {
        for (name, w) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if w <= Ratio::zero() {
                return Err(MetricError::NonPositiveWeight {
                    name,
                    value: w.to_string(),
                });
            }
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn from_integers(alpha: i64, beta: i64, gamma: i64) -> Result<Self, MetricError> {
        Self::new(alpha.into(), beta.into(), gamma.into())
    }

    pub fn alpha(&self) -> Ratio<i64> {
        self.alpha
    }

    pub fn beta(&self) -> Ratio<i64> {
        self.beta
    }

    pub fn gamma(&self) -> Ratio<i64> {
        self.gamma
    }
}

/// Weights in config files are integers or `"p/q"` strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightValue {
    Int(i64),
    Text(String),
}

impl WeightValue {
    fn to_ratio(&self) -> Result<Ratio<i64>, MetricError> {
        match self {
            WeightValue::Int(n) => Ok(Ratio::from_integer(*n)),
            WeightValue::Text(s) => parse_ratio(s),
        }
    }

    fn from_ratio(r: Ratio<i64>) -> Self {
        if r.is_integer() {
            WeightValue::Int(r.to_integer())
        } else {
            WeightValue::Text(r.to_string())
        }
    }
}

fn parse_ratio(s: &str) -> Result<Ratio<i64>, MetricError> {
    let bad = || MetricError::MalformedWeight(s.to_string());
    let (n, d) = match s.trim().split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let n: i64 = n.parse().map_err(|_| bad())?;
    let d: i64 = d.parse().map_err(|_| bad())?;
    if d == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(n, d))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawWeights {
    alpha: WeightValue,
    beta: WeightValue,
    gamma: WeightValue,
}

impl TryFrom<RawWeights> for MetricWeights {
    type Error = MetricError;

    fn try_from(raw: RawWeights) -> Result<Self, Self::Error> {
        MetricWeights::new(raw.alpha.to_ratio()?, raw.beta.to_ratio()?, raw.gamma.to_ratio()?)
    }
}

impl From<MetricWeights> for RawWeights {
    fn from(w: MetricWeights) -> Self {
        RawWeights {
            alpha: WeightValue::from_ratio(w.alpha),
            beta: WeightValue::from_ratio(w.beta),
            gamma: WeightValue::from_ratio(w.gamma),
        }
    }
}

/// Composite score in `[0, 1]`, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawComposite", into = "RawComposite")]
pub struct CompositeScore {
    exact: Ratio<i64>,
    pd_applicable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawComposite {
    value: f64,
    exact: String,
    pd_applicable: bool,
}

impl TryFrom<RawComposite> for CompositeScore {
    type Error = MetricError;

    fn try_from(raw: RawComposite) -> Result<Self, Self::Error> {
        let exact = parse_ratio(&raw.exact)?;
        if exact < Ratio::zero() || exact > Ratio::from_integer(1) {
            return Err(MetricError::MalformedWeight(raw.exact));
        }
        Ok(CompositeScore {
            exact,
            pd_applicable: raw.pd_applicable,
        })
    }
}

impl From<CompositeScore> for RawComposite {
    fn from(c: CompositeScore) -> Self {
        RawComposite {
            value: c.value(),
            exact: c.exact.to_string(),
            pd_applicable: c.pd_applicable,
        }
    }
}

impl CompositeScore {
    pub fn exact(&self) -> Ratio<i64> {
        self.exact
    }

    pub fn value(&self) -> f64 {
        ratio_to_f64(self.exact)
    }

    /// Whether the positional term took part in the weighted mean.
    pub fn pd_applicable(&self) -> bool {
        self.pd_applicable
    }
}

fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    // Both parts are small, so the division is correctly rounded.
    *r.numer() as f64 / *r.denom() as f64
}

/// Weighted composite of one judgment.
///
/// `er = 0` forces zero. Otherwise the ECC and MD terms are always averaged,
/// and the PD term joins (together with its weight in the denominator) only
/// when `pd >= 0`.
pub fn composite(scores: &ComponentScores, weights: &MetricWeights) -> CompositeScore {
    let pd_applicable = scores.pd_applicable();
    if scores.er == 0 {
        return CompositeScore {
            exact: Ratio::zero(),
            pd_applicable,
        };
    }
    let ecc_term = weights.alpha * Ratio::new(scores.ecc, ECC_MAX);
    let md_term = weights.beta * Ratio::new(scores.md, MD_MAX);
    let exact = if pd_applicable {
        let pd_term = weights.gamma * Ratio::new(scores.pd, PD_MAX);
        (ecc_term + md_term + pd_term) / (weights.alpha + weights.beta + weights.gamma)
    } else {
        (ecc_term + md_term) / (weights.alpha + weights.beta)
    };
    CompositeScore { exact, pd_applicable }
}

/// A scored caption joined with its frame labels and unblinded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub frame_id: String,
    pub model_id: String,
    pub rater_id: String,
    pub ecc_label: EccLabel,
    pub mv: MorphokineticVariable,
    pub scores: ComponentScores,
    pub composite: CompositeScore,
}

impl ScoreRecord {
    pub fn new(
        frame_id: impl Into<String>,
        model_id: impl Into<String>,
        rater_id: impl Into<String>,
        ecc_label: EccLabel,
        mv: MorphokineticVariable,
        scores: ComponentScores,
        weights: &MetricWeights,
    ) -> Self {
        Self {
            frame_id: frame_id.into(),
            model_id: model_id.into(),
            rater_id: rater_id.into(),
            ecc_label,
            mv,
            scores,
            composite: composite(&scores, weights),
        }
    }
}

/// Exact running sum of fractions, promoted to 128 bits.
#[derive(Debug, Clone)]
struct ExactSum {
    sum: Option<Ratio<i128>>,
    approx: f64,
    n: usize,
}

impl ExactSum {
    fn new() -> Self {
        Self {
            sum: Some(Ratio::zero()),
            approx: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, r: Ratio<i128>) {
        self.n += 1;
        self.approx += r.to_f64().unwrap_or(f64::NAN);
        self.sum = self.sum.and_then(|s| checked_ratio_add(s, r));
    }

    fn mean(&self) -> Option<Ratio<i128>> {
        if self.n == 0 {
            return None;
        }
        self.sum.map(|s| s / Ratio::from_integer(self.n as i128))
    }

    fn mean_f64(&self) -> f64 {
        match self.mean() {
            Some(m) => ratio128_to_f64(m),
            None => self.approx / self.n as f64,
        }
    }
}

fn checked_ratio_add(a: Ratio<i128>, b: Ratio<i128>) -> Option<Ratio<i128>> {
    let g = num_integer_gcd(*a.denom(), *b.denom());
    let lhs = a.numer().checked_mul(b.denom() / g)?;
    let rhs = b.numer().checked_mul(a.denom() / g)?;
    let denom = a.denom().checked_mul(b.denom() / g)?;
    Some(Ratio::new(lhs.checked_add(rhs)?, denom))
}

fn num_integer_gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

fn ratio128_to_f64(r: Ratio<i128>) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn widen(r: Ratio<i64>) -> Ratio<i128> {
    Ratio::new_raw(*r.numer() as i128, *r.denom() as i128)
}

/// One row of the per-model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub n: usize,
    /// Records with applicable positional detail.
    pub n_pd: usize,
    pub er: f64,
    pub ecc: f64,
    pub md: f64,
    /// Mean over records with `pd >= 0` only.
    pub pd: f64,
    pub total: f64,
    /// Mean composite over records with `pd >= 0` only.
    pub total_pd: f64,
}

pub fn aggregate_model(records: &[ScoreRecord], model: &str) -> Result<ModelSummary, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyCohort);
    }
    let mut er = ExactSum::new();
    let mut ecc = ExactSum::new();
    let mut md = ExactSum::new();
    let mut pd = ExactSum::new();
    let mut total = ExactSum::new();
    let mut total_pd = ExactSum::new();
    for r in records {
        if r.model_id != model {
            return Err(MetricError::ForeignRecord {
                expected: model.to_string(),
                found: r.model_id.clone(),
            });
        }
        er.add(Ratio::from_integer(r.scores.er as i128));
        ecc.add(Ratio::from_integer(r.scores.ecc as i128));
        md.add(Ratio::from_integer(r.scores.md as i128));
        let c = widen(r.composite.exact);
        total.add(c);
        if r.scores.pd_applicable() {
            pd.add(Ratio::from_integer(r.scores.pd as i128));
            total_pd.add(c);
        }
    }
    if pd.n == 0 {
        return Err(MetricError::EmptyPdCohort);
    }
    Ok(ModelSummary {
        model_id: model.to_string(),
        n: records.len(),
        n_pd: pd.n,
        er: er.mean_f64(),
        ecc: ecc.mean_f64(),
        md: md.mean_f64(),
        pd: pd.mean_f64(),
        total: total.mean_f64(),
        total_pd: total_pd.mean_f64(),
    })
}

/// Mean and sample standard deviation of composites for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableStat {
    pub n: usize,
    pub mean: f64,
    /// Divisor `n - 1`; zero when `n == 1`.
    pub std: f64,
}

pub fn aggregate_by_variable(records: &[ScoreRecord]) -> BTreeMap<MorphokineticVariable, VariableStat> {
    let mut groups: BTreeMap<MorphokineticVariable, Vec<Ratio<i128>>> = BTreeMap::new();
    for r in records {
        groups.entry(r.mv).or_default().push(widen(r.composite.exact));
    }
    groups
        .into_iter()
        .map(|(mv, values)| (mv, variable_stat(&values)))
        .collect()
}

fn variable_stat(values: &[Ratio<i128>]) -> VariableStat {
    let mut sum = ExactSum::new();
    for v in values {
        sum.add(*v);
    }
    let n = values.len();
    let mean = sum.mean();
    let std = if n < 2 {
        0.0
    } else {
        let exact_var = mean.and_then(|m| {
            values.iter().try_fold(Ratio::<i128>::zero(), |acc, v| {
                let d = *v - m;
                let sq = Ratio::new(d.numer().checked_mul(*d.numer())?, d.denom().checked_mul(*d.denom())?);
                checked_ratio_add(acc, sq)
            })
        });
        match exact_var {
            Some(ss) => (ratio128_to_f64(ss) / (n - 1) as f64).sqrt(),
            None => {
                let m = sum.mean_f64();
                let ss: f64 = values.iter().map(|v| (ratio128_to_f64(*v) - m).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            }
        }
    };
    VariableStat {
        n,
        mean: sum.mean_f64(),
        std,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentAgreement {
    /// Fraction of pairs with identical values.
    pub exact: f64,
    /// Mean absolute difference. For `pd` only pairs where both raters found
    /// positional detail applicable are compared; `None` if there are none.
    pub mad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub pairs: usize,
    pub er: ComponentAgreement,
    pub ecc: ComponentAgreement,
    pub md: ComponentAgreement,
    pub pd: ComponentAgreement,
    pub composite_mad: f64,
}

impl AgreementSummary {
    pub fn component(&self, c: Criterion) -> &ComponentAgreement {
        match c {
            Criterion::Er => &self.er,
            Criterion::Ecc => &self.ecc,
            Criterion::Md => &self.md,
            Criterion::Pd => &self.pd,
        }
    }
}

/// Agreement between two raters over the same `(frame, model)` pairs.
pub fn agreement(records_a: &[ScoreRecord], records_b: &[ScoreRecord]) -> Result<AgreementSummary, MetricError> {
    fn index(records: &[ScoreRecord]) -> Result<HashMap<(&str, &str), &ScoreRecord>, MetricError> {
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            if map.insert((r.frame_id.as_str(), r.model_id.as_str()), r).is_some() {
                return Err(MetricError::UnpairedRecords(format!(
                    "duplicate record for frame `{}` model `{}`",
                    r.frame_id, r.model_id
                )));
            }
        }
        Ok(map)
    }

    let a = index(records_a)?;
    let b = index(records_b)?;
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        let missing = a
            .keys()
            .find(|k| !b.contains_key(*k))
            .or_else(|| b.keys().find(|k| !a.contains_key(*k)));
        return Err(MetricError::UnpairedRecords(match missing {
            Some((f, m)) => format!("frame `{f}` model `{m}` scored by only one rater"),
            None => "record sets differ".to_string(),
        }));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyCohort);
    }

    let pairs: Vec<(&ScoreRecord, &ScoreRecord)> = a.iter().map(|(k, ra)| (*ra, b[k])).collect();
    let n = pairs.len();
    let per_component = |c: Criterion| {
        let matches = pairs.iter().filter(|(x, y)| x.scores.get(c) == y.scores.get(c)).count();
        let diffs: Vec<i64> = pairs
            .iter()
            .filter(|(x, y)| c != Criterion::Pd || (x.scores.pd_applicable() && y.scores.pd_applicable()))
            .map(|(x, y)| (x.scores.get(c) - y.scores.get(c)).abs())
            .collect();
        ComponentAgreement {
            exact: matches as f64 / n as f64,
            mad: (!diffs.is_empty()).then(|| diffs.iter().sum::<i64>() as f64 / diffs.len() as f64),
        }
    };

    let mut composite_diff = ExactSum::new();
    for (x, y) in &pairs {
        let d = widen(x.composite.exact) - widen(y.composite.exact);
        composite_diff.add(if d < Ratio::zero() { -d } else { d });
    }

    Ok(AgreementSummary {
        pairs: n,
        er: per_component(Criterion::Er),
        ecc: per_component(Criterion::Ecc),
        md: per_component(Criterion::Md),
        pd: per_component(Criterion::Pd),
        composite_mad: composite_diff.mean_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(er: i64, ecc: i64, md: i64, pd: i64) -> ComponentScores {
        ComponentScores::new(er, ecc, md, pd).unwrap()
    }

    fn rec(frame: &str, model: &str, mv: MorphokineticVariable, s: ComponentScores) -> ScoreRecord {
        ScoreRecord::new(frame, model, "r1", EccLabel::Ecc1, mv, s, &MetricWeights::default())
    }

    #[test]
    fn validation_accepts_bounds_and_rejects_overflow() {
        assert!(validate_components((1, 3, 4, 3)).is_ok());
        assert!(validate_components((0, 0, 0, -1)).is_ok());
        assert_eq!(
            validate_components((1, 2, 5, 0)),
            Err(MetricError::OutOfRange {
                field: Criterion::Md,
                value: 5
            })
        );
        assert_eq!(
            validate_components((1, 2, 2, -2)).unwrap_err(),
            MetricError::OutOfRange {
                field: Criterion::Pd,
                value: -2
            }
        );
        assert!(matches!(
            validate_components((2, 0, 0, 0)),
            Err(MetricError::OutOfRange {
                field: Criterion::Er,
                ..
            })
        ));
        assert!(matches!(
            validate_components((1, -1, 0, 0)),
            Err(MetricError::OutOfRange {
                field: Criterion::Ecc,
                ..
            })
        ));
    }

    #[test]
    fn deserialization_validates() {
        let ok: ComponentScores = serde_json::from_str(r#"{"er":1,"ecc":2,"md":3,"pd":-1}"#).unwrap();
        assert_eq!(ok, cs(1, 2, 3, -1));
        let err = serde_json::from_str::<ComponentScores>(r#"{"er":1,"ecc":4,"md":3,"pd":0}"#).unwrap_err();
        assert!(err.to_string().contains("ecc score 4 is out of range"));
    }

    #[test]
    fn composite_examples() {
        let w = MetricWeights::default();
        assert_eq!(composite(&cs(0, 3, 4, 3), &w).exact(), Ratio::zero());
        assert_eq!(composite(&cs(1, 3, 4, 3), &w).exact(), Ratio::from_integer(1));
        assert_eq!(composite(&cs(1, 2, 2, 1), &w).exact(), Ratio::new(4, 7));
        let na = composite(&cs(1, 1, 1, -1), &w);
        assert_eq!(na.exact(), Ratio::new(11, 36));
        assert!(!na.pd_applicable());
        assert!((na.value() - 0.305556).abs() < 1e-6);
    }

    #[test]
    fn not_applicable_branch_differs_from_pd_zero() {
        let w = MetricWeights::default();
        // (4·2/3 + 2·2/4) / 6 versus (4·2/3 + 2·2/4 + 0) / 7
        assert_eq!(composite(&cs(1, 2, 2, -1), &w).exact(), Ratio::new(11, 18));
        assert_eq!(composite(&cs(1, 2, 2, 0), &w).exact(), Ratio::new(11, 21));
    }

    #[test]
    fn weights_reject_non_positive_and_parse_fractions() {
        assert!(MetricWeights::from_integers(0, 2, 1).is_err());
        assert!(MetricWeights::from_integers(4, -2, 1).is_err());
        let w: MetricWeights = serde_json::from_str(r#"{"alpha":4,"beta":"1/2","gamma":1}"#).unwrap();
        assert_eq!(w.beta(), Ratio::new(1, 2));
        assert!(serde_json::from_str::<MetricWeights>(r#"{"alpha":4,"beta":"1/0","gamma":1}"#).is_err());
        let back: MetricWeights = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn composite_serializes_value_and_exact_fraction() {
        let c = composite(&cs(1, 2, 2, 1), &MetricWeights::default());
        let json = serde_json::to_value(c).unwrap();
        assert_eq!(json["exact"], "4/7");
        assert_eq!(json["pd_applicable"], true);
        let back: CompositeScore = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn aggregate_examples() {
        use MorphokineticVariable::T2;
        let full = vec![rec("a", "m", T2, cs(1, 3, 4, 3)); 4];
        let s = aggregate_model(&full, "m").unwrap();
        assert_eq!(
            (s.er, s.ecc, s.md, s.pd, s.total, s.total_pd),
            (1.0, 3.0, 4.0, 3.0, 1.0, 1.0)
        );

        let mixed = vec![rec("a", "m", T2, cs(1, 2, 2, 1)), rec("b", "m", T2, cs(1, 1, 1, -1))];
        let s = aggregate_model(&mixed, "m").unwrap();
        let expected_total = (4.0 / 7.0 + 11.0 / 36.0) / 2.0;
        assert!((s.total - expected_total).abs() < 1e-15);
        assert!((s.total - 0.438492).abs() < 1e-6);
        assert_eq!(s.total_pd, 4.0 / 7.0);
        assert_eq!(s.pd, 1.0);
        assert_eq!((s.n, s.n_pd), (2, 1));
    }

    #[test]
    fn aggregate_mean_of_two_composites() {
        use MorphokineticVariable::T2;
        let with = |frame: &str, exact: Ratio<i64>| {
            let mut r = rec(frame, "m", T2, cs(1, 3, 4, 3));
            r.composite = CompositeScore {
                exact,
                pd_applicable: true,
            };
            r
        };
        let s = aggregate_model(&[with("a", Ratio::new(1, 2)), with("b", Ratio::new(7, 10))], "m").unwrap();
        assert!((s.total - 0.6).abs() < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        use MorphokineticVariable::T2;
        assert_eq!(aggregate_model(&[], "m"), Err(MetricError::EmptyCohort));
        let no_pd = vec![rec("a", "m", T2, cs(1, 3, 4, -1))];
        assert_eq!(aggregate_model(&no_pd, "m"), Err(MetricError::EmptyPdCohort));
        let other = vec![rec("a", "x", T2, cs(1, 3, 4, 1))];
        assert!(matches!(
            aggregate_model(&other, "m"),
            Err(MetricError::ForeignRecord { .. })
        ));
    }

    #[test]
    fn variable_stats() {
        use MorphokineticVariable::{T2, TB};
        let mk = |frame: &str, mv, exact: Ratio<i64>| {
            let mut r = rec(frame, "m", mv, cs(1, 3, 4, 3));
            r.composite = CompositeScore {
                exact,
                pd_applicable: true,
            };
            r
        };
        let records = vec![
            mk("a", T2, Ratio::new(4, 5)),
            mk("b", T2, Ratio::new(4, 5)),
            mk("c", T2, Ratio::new(4, 5)),
            mk("d", TB, Ratio::new(3, 5)),
            mk("e", TB, Ratio::from_integer(1)),
        ];
        let stats = aggregate_by_variable(&records);
        assert_eq!(stats.len(), 2);
        assert_eq!(
            stats[&T2],
            VariableStat {
                n: 3,
                mean: 0.8,
                std: 0.0
            }
        );
        assert!((stats[&TB].mean - 0.8).abs() < 1e-15);
        assert!((stats[&TB].std - 0.08f64.sqrt()).abs() < 1e-15);
        assert!((stats[&TB].std - 0.282843).abs() < 1e-6);

        let single = aggregate_by_variable(&records[3..4]);
        assert_eq!(single[&TB].std, 0.0);
    }

    #[test]
    fn agreement_examples() {
        use MorphokineticVariable::T2;
        let a = vec![rec("f", "m", T2, cs(1, 3, 4, 2))];
        let b = vec![rec("f", "m", T2, cs(1, 2, 4, 2))];
        let s = agreement(&a, &b).unwrap();
        assert_eq!(s.ecc.exact, 0.0);
        assert_eq!(s.ecc.mad, Some(1.0));
        assert_eq!(s.md.exact, 1.0);

        let same = agreement(&a, &a).unwrap();
        for c in Criterion::ALL {
            assert_eq!(same.component(c).exact, 1.0);
            assert_eq!(same.component(c).mad, Some(0.0));
        }
        assert_eq!(same.composite_mad, 0.0);
    }

    #[test]
    fn agreement_pd_mad_skips_not_applicable() {
        use MorphokineticVariable::T2;
        let a = vec![rec("f", "m", T2, cs(1, 3, 4, -1)), rec("g", "m", T2, cs(1, 3, 4, -1))];
        let b = vec![rec("f", "m", T2, cs(1, 3, 4, 3)), rec("g", "m", T2, cs(1, 3, 4, -1))];
        let s = agreement(&a, &b).unwrap();
        assert_eq!(s.pd.exact, 0.5);
        assert_eq!(s.pd.mad, None);
    }

    #[test]
    fn agreement_rejects_unpaired() {
        use MorphokineticVariable::T2;
        let a = vec![rec("f", "m", T2, cs(1, 3, 4, 2))];
        let b = vec![rec("g", "m", T2, cs(1, 3, 4, 2))];
        assert!(matches!(agreement(&a, &b), Err(MetricError::UnpairedRecords(_))));
        let dup = vec![a[0].clone(), a[0].clone()];
        assert!(matches!(agreement(&dup, &dup), Err(MetricError::UnpairedRecords(_))));
        assert!(matches!(agreement(&a, &[]), Err(MetricError::UnpairedRecords(_))));
        assert_eq!(agreement(&[], &[]), Err(MetricError::EmptyCohort));
    }
}
