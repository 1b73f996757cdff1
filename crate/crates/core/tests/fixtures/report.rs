//! Fixed synthetic aggregates rendered against the golden report files.
#![allow(dead_code)]

use embryocap::labels::MorphokineticVariable as Mv;
use embryocap::metric::{ModelSummary, VariableStat};
use embryocap::report::VariableTable;

pub const MODELS: [&str; 3] = ["ivv-1000", "ivv-700", "paligemma-base"];

fn summary(id: &str, n: usize, n_pd: usize, v: [f64; 6]) -> ModelSummary {
    ModelSummary {
        model_id: id.into(),
        n,
        n_pd,
        er: v[0],
        ecc: v[1],
        md: v[2],
        pd: v[3],
        total: v[4],
        total_pd: v[5],
    }
}

/// ER ties exactly between the first two models; Total score PD ties only
/// after rounding; MD of the last model sits on a rounding midpoint.
pub fn summaries() -> Vec<ModelSummary> {
    vec![
        summary("ivv-1000", 100, 61, [1.0, 2.3, 2.52, 1.03, 0.6712, 0.70041]),
        summary("ivv-700", 100, 58, [1.0, 2.18, 2.4449, 1.1, 0.6391, 0.7004]),
        summary("paligemma-base", 100, 40, [0.96, 1.02, 1.345, 0.5, 0.2875, 0.31]),
    ]
}

fn stat(n: usize, mean: f64, std: f64) -> VariableStat {
    VariableStat { n, mean, std }
}

/// t2 carries the 0.79±0.14 cell, tPB2 an exact tie, tM a single-record
/// cell and two absent cells, tEB a row with one model only.
pub fn per_variable() -> VariableTable {
    let mut t = VariableTable::new();
    t.insert(
        "ivv-1000".into(),
        [
            (Mv::TPb2, stat(4, 0.5, 0.2)),
            (Mv::T2, stat(9, 0.79, 0.14)),
            (Mv::TM, stat(1, 0.62, 0.0)),
        ]
        .into(),
    );
    t.insert(
        "ivv-700".into(),
        [(Mv::TPb2, stat(4, 0.5, 0.1)), (Mv::T2, stat(9, 0.7, 0.1234))].into(),
    );
    t.insert(
        "paligemma-base".into(),
        [
            (Mv::TPb2, stat(4, 0.125, 0.0625)),
            (Mv::T2, stat(9, 0.3, 0.25)),
            (Mv::TEb, stat(2, 0.05, 0.070_710_678_118_654_75)),
        ]
        .into(),
    );
    t
}
