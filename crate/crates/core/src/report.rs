//! Markdown and TSV tables of aggregated scores.
//!
//! Rendering is pure. Numbers are rounded only here, half away from zero,
//! applied to the shortest decimal form of each value. "Best" is decided on
//! unrounded values and every model tying the best is marked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::artifact::escape_field;
use crate::labels::MorphokineticVariable;
use crate::metric::{ModelSummary, VariableStat};

pub const ABSENT_CELL: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("no aggregate for model `{0}`")]
    MissingModel(String),
    #[error("invalid report spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    PerModel,
    PerVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Tsv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Tsv => "tsv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub kind: ReportKind,
    /// Row (per-model) or column (per-variable) order.
    pub models: Vec<String>,
    #[serde(default = "default_decimals")]
    pub decimals: usize,
    #[serde(default = "default_formats")]
    pub formats: BTreeSet<ReportFormat>,
}

fn default_decimals() -> usize {
    2
}

fn default_formats() -> BTreeSet<ReportFormat> {
    [ReportFormat::Markdown, ReportFormat::Tsv].into()
}

impl ReportSpec {
    pub fn new(kind: ReportKind, models: Vec<String>) -> Self {
        Self {
            kind,
            models,
            decimals: default_decimals(),
            formats: default_formats(),
        }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.models.is_empty() {
            return Err(ReportError::InvalidSpec("models must be nonempty".into()));
        }
        let unique: BTreeSet<&String> = self.models.iter().collect();
        if unique.len() != self.models.len() {
            return Err(ReportError::InvalidSpec("models must be unique".into()));
        }
        if self.formats.is_empty() {
            return Err(ReportError::InvalidSpec("at least one format is required".into()));
        }
        Ok(())
    }
}

/// Rendered documents, one per requested format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub documents: BTreeMap<ReportFormat, String>,
}

impl Report {
    pub fn get(&self, format: ReportFormat) -> Option<&str> {
        self.documents.get(&format).map(String::as_str)
    }
}

/// Rounds half away from zero to `decimals` places, working on the shortest
/// decimal string that round-trips `value`.
pub fn round_decimal(value: f64, decimals: usize) -> String {
    if !value.is_finite() {
        return "NaN".into();
    }
    let shortest = format!("{}", value.abs());
    let (int_part, frac_part) = shortest.split_once('.').unwrap_or((&shortest, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let int_len = int_part.len();
    // Pad so the digit after the cut exists.
    while digits.len() < int_len + decimals + 1 {
        digits.push(0);
    }
    let round_up = digits[int_len + decimals] >= 5;
    digits.truncate(int_len + decimals);
    let mut int_len = int_len;
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                int_len += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let mut out = String::new();
    if value.is_sign_negative() && digits.iter().any(|&d| d != 0) {
        out.push('-');
    }
    out.extend(digits[..int_len].iter().map(|&d| (b'0' + d) as char));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[int_len..].iter().map(|&d| (b'0' + d) as char));
    }
    out
}

/// Flags each entry equal to the maximum of the present values.
fn best_flags(values: &[Option<f64>]) -> Vec<bool> {
    let max = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| matches!(v, Some(x) if *x == max)).collect()
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn bold_if(text: String, best: bool) -> String {
    if best {
        format!("**{text}**")
    } else {
        text
    }
}

const MODEL_COLUMNS: [(&str, &str); 6] = [
    ("ER", "er"),
    ("ECC", "ecc"),
    ("MD", "md"),
    ("PD", "pd"),
    ("Total score", "total"),
    ("Total score PD", "total_pd"),
];

fn summary_values(s: &ModelSummary) -> [f64; 6] {
    [s.er, s.ecc, s.md, s.pd, s.total, s.total_pd]
}

/// Per-model means table: ER, ECC, MD, PD, total score, total score PD.
pub fn render_per_model(spec: &ReportSpec, summaries: &[ModelSummary]) -> Result<Report, ReportError> {
    spec.validate()?;
    let rows: Vec<&ModelSummary> = spec
        .models
        .iter()
        .map(|m| {
            summaries
                .iter()
                .find(|s| &s.model_id == m)
                .ok_or_else(|| ReportError::MissingModel(m.clone()))
        })
        .collect::<Result<_, _>>()?;
    let values: Vec<[f64; 6]> = rows.iter().map(|s| summary_values(s)).collect();
    let best: Vec<Vec<bool>> = (0..6)
        .map(|c| best_flags(&values.iter().map(|v| Some(v[c])).collect::<Vec<_>>()))
        .collect();
    let fmt = |x: f64| round_decimal(x, spec.decimals);

    let mut report = Report::default();
    for &format in &spec.formats {
        let mut out = String::new();
        match format {
            ReportFormat::Markdown => {
                out.push_str("| Model |");
                for (title, _) in MODEL_COLUMNS {
                    let _ = write!(out, " {title} |");
                }
                out.push_str("\n|---|");
                out.push_str(&"---:|".repeat(MODEL_COLUMNS.len()));
                out.push('\n');
                for (r, s) in rows.iter().enumerate() {
                    let _ = write!(out, "| {} |", md_escape(&s.model_id));
                    for c in 0..MODEL_COLUMNS.len() {
                        let _ = write!(out, " {} |", bold_if(fmt(values[r][c]), best[c][r]));
                    }
                    out.push('\n');
                }
                out.push_str(
                    "\nBest value per column in bold. PD and Total score PD use only records where \
                     positional detail was applicable.\n",
                );
            }
            ReportFormat::Tsv => {
                out.push_str("model\tn\tn_pd");
                for (_, key) in MODEL_COLUMNS {
                    let _ = write!(out, "\t{key}\t{key}_best");
                }
                out.push('\n');
                for (r, s) in rows.iter().enumerate() {
                    let _ = write!(out, "{}\t{}\t{}", escape_field(&s.model_id), s.n, s.n_pd);
                    for c in 0..MODEL_COLUMNS.len() {
                        let _ = write!(out, "\t{}\t{}", fmt(values[r][c]), best[c][r]);
                    }
                    out.push('\n');
                }
            }
        }
        report.documents.insert(format, out);
    }
    Ok(report)
}

/// Per-variable composite statistics keyed by model id.
pub type VariableTable = BTreeMap<String, BTreeMap<MorphokineticVariable, VariableStat>>;

/// One row per variable present for any model, in canonical order, with a
/// `mean±std` cell per model.
pub fn render_per_variable(spec: &ReportSpec, stats: &VariableTable) -> Result<Report, ReportError> {
    spec.validate()?;
    let empty = BTreeMap::new();
    let columns: Vec<&BTreeMap<MorphokineticVariable, VariableStat>> =
        spec.models.iter().map(|m| stats.get(m).unwrap_or(&empty)).collect();
    let present: Vec<MorphokineticVariable> = MorphokineticVariable::ALL
        .into_iter()
        .filter(|mv| columns.iter().any(|c| c.contains_key(mv)))
        .collect();
    let fmt = |x: f64| round_decimal(x, spec.decimals);

    let mut report = Report::default();
    for &format in &spec.formats {
        let mut out = String::new();
        match format {
            ReportFormat::Markdown => {
                out.push_str("| Variable |");
                for m in &spec.models {
                    let _ = write!(out, " {} |", md_escape(m));
                }
                out.push_str("\n|---|");
                out.push_str(&"---:|".repeat(spec.models.len()));
                out.push('\n');
            }
            ReportFormat::Tsv => {
                out.push_str("mv");
                for m in &spec.models {
                    let m = escape_field(m);
                    let _ = write!(out, "\t{m}_n\t{m}_mean\t{m}_std\t{m}_best");
                }
                out.push('\n');
            }
        }
        for mv in &present {
            let cells: Vec<Option<&VariableStat>> = columns.iter().map(|c| c.get(mv)).collect();
            let best = best_flags(&cells.iter().map(|c| c.map(|s| s.mean)).collect::<Vec<_>>());
            match format {
                ReportFormat::Markdown => {
                    let _ = write!(out, "| {mv} |");
                    for (cell, &is_best) in cells.iter().zip(&best) {
                        let text = match cell {
                            Some(s) => bold_if(format!("{}±{}", fmt(s.mean), fmt(s.std)), is_best),
                            None => ABSENT_CELL.to_string(),
                        };
                        let _ = write!(out, " {text} |");
                    }
                    out.push('\n');
                }
                ReportFormat::Tsv => {
                    out.push_str(mv.as_str());
                    for (cell, &is_best) in cells.iter().zip(&best) {
                        match cell {
                            Some(s) => {
                                let _ = write!(out, "\t{}\t{}\t{}\t{is_best}", s.n, fmt(s.mean), fmt(s.std));
                            }
                            None => out.push_str("\t0\t\t\tfalse"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        if format == ReportFormat::Markdown {
            let _ = write!(
                out,
                "\nCells are mean±std of composite scores. std is the sample standard deviation \
                 (divisor n-1), shown as 0 for single-record cells. Best mean per row in bold; \
                 {ABSENT_CELL} marks no records.\n"
            );
        }
        report.documents.insert(format, out);
    }
    Ok(report)
}
