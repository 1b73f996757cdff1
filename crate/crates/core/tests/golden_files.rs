//! Byte-for-byte comparisons against checked-in golden files. Set
//! `EMBRYOCAP_BLESS=1` to rewrite report goldens after an intended change.

#[path = "fixtures/report.rs"]
mod fixture;

use std::path::PathBuf;

use embryocap::prompt::{build_prompt, PromptStyle};
use embryocap::report::{render_per_model, render_per_variable, ReportFormat, ReportKind, ReportSpec};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("EMBRYOCAP_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from golden");
}

fn models() -> Vec<String> {
    fixture::MODELS.iter().map(|s| s.to_string()).collect()
}

#[test]
fn per_model_report_matches_golden() {
    let report = render_per_model(&ReportSpec::new(ReportKind::PerModel, models()), &fixture::summaries()).unwrap();
    check("per_model.md", report.get(ReportFormat::Markdown).unwrap());
    check("per_model.tsv", report.get(ReportFormat::Tsv).unwrap());
}

#[test]
fn per_variable_report_matches_golden() {
    let spec = ReportSpec::new(ReportKind::PerVariable, models());
    let report = render_per_variable(&spec, &fixture::per_variable()).unwrap();
    check("per_variable.md", report.get(ReportFormat::Markdown).unwrap());
    check("per_variable.tsv", report.get(ReportFormat::Tsv).unwrap());
}

#[test]
fn prompts_match_golden_bytes() {
    // Prompt goldens are never blessed from code.
    let local = std::fs::read(golden("prompt_vlm_local.txt")).unwrap();
    let commercial = std::fs::read(golden("prompt_commercial_llm.txt")).unwrap();
    assert_eq!(build_prompt(PromptStyle::VlmLocal).text.as_bytes(), local.as_slice());
    assert_eq!(
        build_prompt(PromptStyle::CommercialLlm).text.as_bytes(),
        commercial.as_slice()
    );
}
