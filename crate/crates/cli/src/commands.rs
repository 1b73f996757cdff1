use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use embryocap::artifact::{write_atomic, Provenance};
use embryocap::dataset::{self, Manifest, Split, SplitSpec};
use embryocap::gateway::{caption_test_set, BatchReport, CaptionStore, ModelEndpoint, PreparedDir};
use embryocap::metric::AgreementSummary;
use embryocap::preprocess::{self, prepared_png_path, RESAMPLER_ID, TARGET_SIDE};
use embryocap::report::{render_per_model, render_per_variable, ReportFormat, ReportKind, ReportSpec, VariableTable};
use embryocap::sessions::{plan_session, select_frames, PlanRequest, SessionStore};
use embryocap::{aggregate_by_variable, aggregate_model, agreement, ModelSummary, ScoreRecord};
use serde::{Deserialize, Serialize};

use crate::config::{Layout, PipelineConfig};
use crate::{server, Cli, CliError, Command};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let layout = Layout::new(cli.out.clone().unwrap_or_else(|| cfg.out.clone()));
    fs::create_dir_all(&layout.out)?;
    let started = Utc::now();
    let result = match &cli.command {
        Command::Ingest => ingest(&cfg, &layout),
        Command::Split => split(&cfg, &layout, cli.manifest.as_deref()),
        Command::Preprocess => preprocess(&cfg, &layout, cli.manifest.as_deref()),
        Command::Caption { providers } => caption(&cfg, &layout, cli.manifest.as_deref(), providers),
        Command::Plan => plan(&cfg, &layout, cli.manifest.as_deref()),
        Command::Serve { bind } => serve(&cfg, &layout, bind.as_deref()),
        Command::Aggregate => aggregate(&cfg, &layout),
        Command::Report => report(&cfg, &layout),
    };
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("exit={}", e.exit_code()),
    };
    let summary = match &result {
        Ok(p) => p.summary(),
        Err(_) => Provenance::new(cli.command.name(), Some(cfg.seed)).summary(),
    };
    append_run_log(&layout.run_log(), &started, &status, &summary)?;
    result.map(|_| ())
}

fn stamp(t: &chrono::DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn append_run_log(path: &Path, started: &chrono::DateTime<Utc>, status: &str, summary: &str) -> Result<(), CliError> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}\t{}\t{status}\t{summary}", stamp(started), stamp(&Utc::now()))?;
    Ok(())
}

/// Fails with a validation error naming the step that produces `path`.
fn require(path: &Path, step: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "`{}` not found; run `embryocap {step}` first",
            path.display()
        )))
    }
}

fn load_manifest(path: &Path, step: &str) -> Result<(Manifest, Vec<u8>), CliError> {
    require(path, step)?;
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((Manifest::from_tsv(&text)?, bytes))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, Vec<u8>), CliError> {
    let bytes = fs::read(path)?;
    let value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("`{}`: {e}", path.display())))?;
    Ok((value, bytes))
}

fn ingest(cfg: &PipelineConfig, layout: &Layout) -> Result<Provenance, CliError> {
    let source = fs::read_to_string(&cfg.dataset.source)
        .map_err(|e| CliError::Validation(format!("`{}`: {e}", cfg.dataset.source.display())))?;
    let manifest = dataset::ingest(&source, &cfg.dataset.root)?;
    write_atomic(&layout.ingested(), manifest.to_tsv().as_bytes())?;
    println!(
        "ingested {} frames into {}",
        manifest.len(),
        layout.ingested().display()
    );
    Ok(Provenance::new("ingest", None).with_input("source", source.as_bytes()))
}

fn split(cfg: &PipelineConfig, layout: &Layout, input: Option<&Path>) -> Result<Provenance, CliError> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| layout.ingested());
    let (manifest, bytes) = load_manifest(&input, "ingest")?;
    let spec = SplitSpec {
        test_count: cfg.split.test_count,
        subset_sizes: cfg.split.subset_sizes.clone(),
        seed: cfg.seed,
        stratify_by: cfg.split.stratify_by,
    };
    let out = dataset::split(&manifest, &spec)?;
    write_atomic(&layout.manifest(), out.to_tsv().as_bytes())?;
    println!(
        "split {} frames: {} train, {} test -> {}",
        out.len(),
        out.in_split(Split::Train).count(),
        out.in_split(Split::Test).count(),
        layout.manifest().display()
    );
    Ok(Provenance::new("split", Some(cfg.seed)).with_input("manifest", &bytes))
}

fn manifest_path(layout: &Layout, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| layout.manifest())
}

#[derive(Serialize, Deserialize)]
struct PreparedIndex {
    provenance: Provenance,
    target_side: u32,
    resampler: String,
    frames: Vec<String>,
}

fn preprocess(cfg: &PipelineConfig, layout: &Layout, manifest: Option<&Path>) -> Result<Provenance, CliError> {
    let (manifest, bytes) = load_manifest(&manifest_path(layout, manifest), "split")?;
    let dir = layout.prepared();
    fs::create_dir_all(&dir)?;
    let mut written = 0;
    for frame in manifest.frames() {
        let png = prepared_png_path(&dir, &frame.frame_id);
        if png.exists() && png.with_extension("json").exists() {
            continue;
        }
        let source = cfg.dataset.root.join(&frame.image_ref);
        let prepared = preprocess::prepare_file(&source, &frame.frame_id)
            .map_err(|e| CliError::Validation(format!("frame `{}`: {e}", frame.frame_id)))?;
        prepared.save(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        written += 1;
    }
    let provenance = Provenance::new("preprocess", None).with_input("manifest", &bytes);
    let index = PreparedIndex {
        provenance: provenance.clone(),
        target_side: TARGET_SIDE,
        resampler: RESAMPLER_ID.into(),
        frames: manifest.frames().iter().map(|f| f.frame_id.clone()).collect(),
    };
    write_atomic(&dir.join("index.json"), &to_json(&index))?;
    println!(
        "prepared {written} new frame(s), {} total, in {}",
        manifest.len(),
        dir.display()
    );
    Ok(provenance)
}

#[derive(Serialize, Deserialize)]
struct FailureReport {
    provenance: Provenance,
    report: BatchReport,
}

fn caption(
    cfg: &PipelineConfig,
    layout: &Layout,
    manifest: Option<&Path>,
    only: &[String],
) -> Result<Provenance, CliError> {
    let (manifest, bytes) = load_manifest(&manifest_path(layout, manifest), "split")?;
    require(&layout.prepared().join("index.json"), "preprocess")?;
    for id in only {
        if !cfg.models.iter().any(|m| &m.id == id) {
            return Err(CliError::Validation(format!(
                "--provider `{id}` is not a configured model"
            )));
        }
    }
    let endpoints = cfg
        .models
        .iter()
        .filter(|m| only.is_empty() || only.contains(&m.id))
        .map(|m| ModelEndpoint::new(m.id.clone(), m.provider.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    if endpoints.is_empty() {
        return Err(CliError::Validation("no models configured".into()));
    }
    let provenance = Provenance::new("caption", Some(cfg.seed)).with_input("manifest", &bytes);
    let mut store = CaptionStore::open(&layout.captions(), provenance.clone())?;
    let images = PreparedDir(layout.prepared());
    let runtime = tokio::runtime::Runtime::new()?;
    let report = runtime.block_on(caption_test_set(&manifest, &endpoints, &mut store, &images))?;
    let failures = report.failures.len();
    write_atomic(
        &layout.caption_failures(),
        &to_json(&FailureReport {
            provenance: provenance.clone(),
            report: report.clone(),
        }),
    )?;
    println!(
        "captions: {} cached, {} requested, {} stored, {failures} failed; store has {} records",
        report.cached,
        report.requested,
        report.succeeded,
        store.len()
    );
    if failures > 0 {
        for f in &report.failures {
            eprintln!("  {} / {}: {}", f.frame_id, f.model_id, f.error);
        }
        return Err(CliError::Runtime(format!(
            "{failures} caption request(s) failed; see {} and rerun to retry them",
            layout.caption_failures().display()
        )));
    }
    Ok(provenance)
}

fn plan(cfg: &PipelineConfig, layout: &Layout, manifest: Option<&Path>) -> Result<Provenance, CliError> {
    let (manifest, manifest_bytes) = load_manifest(&manifest_path(layout, manifest), "split")?;
    require(&layout.captions(), "caption")?;
    let captions_bytes = fs::read(layout.captions())?;
    let captions = CaptionStore::read(&layout.captions())?;
    if cfg.session.raters.is_empty() {
        return Err(CliError::Validation(
            "session.raters: at least one rater is required".into(),
        ));
    }
    let test: Vec<_> = manifest.in_split(Split::Test).cloned().collect();
    let count = cfg.session.frame_count.unwrap_or(test.len());
    if count > test.len() {
        return Err(CliError::Validation(format!(
            "session.frame_count: {count} requested but the test split has {} frames",
            test.len()
        )));
    }
    let frames = select_frames(&test, count, cfg.seed);
    let hashes: BTreeMap<&str, String> = cfg
        .models
        .iter()
        .map(|m| (m.id.as_str(), m.provider.prompt().hash()))
        .collect();
    let model_ids = cfg.model_ids();
    let rater_ids: Vec<String> = cfg.session.raters.iter().map(|r| r.id.clone()).collect();
    let req = PlanRequest {
        session_id: &cfg.session.id,
        frames: &frames,
        model_ids: &model_ids,
        rater_ids: &rater_ids,
        calibration_count: cfg.session.calibration_count,
        seed: cfg.seed,
        weights: cfg.weights(),
    };
    let mut session = plan_session(&req, |frame, model| {
        captions
            .lookup(frame, model, hashes.get(model)?)
            .map(|r| r.text.clone())
    })?;
    let provenance = Provenance::new("plan", Some(cfg.seed))
        .with_input("manifest", &manifest_bytes)
        .with_input("captions", &captions_bytes);
    session.provenance = Some(provenance.clone());
    let mut store = SessionStore::open(&layout.sessions())?;
    let planned = session.plan.assignment.len();
    store.insert(session)?;
    println!(
        "planned session `{}`: {} frames x {} models x {} raters, {planned} work items",
        cfg.session.id,
        frames.len(),
        model_ids.len(),
        rater_ids.len()
    );
    Ok(provenance)
}

fn serve(cfg: &PipelineConfig, layout: &Layout, bind: Option<&str>) -> Result<Provenance, CliError> {
    require(&layout.sessions(), "plan")?;
    let state = server::AppState::from_config(cfg, layout)?;
    let bind = bind.unwrap_or(&cfg.session.bind).to_string();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {bind}: {e}")))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        server::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    Ok(Provenance::new("serve", None))
}

/// Exported session scores.
#[derive(Serialize, Deserialize)]
pub struct ScoresFile {
    pub provenance: Provenance,
    pub session_id: String,
    pub records: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub summary: AgreementSummary,
}

/// Per-model and per-variable aggregates of one session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateFile {
    pub provenance: Provenance,
    pub session_id: String,
    pub models: Vec<ModelSummary>,
    pub per_variable: VariableTable,
    #[serde(default)]
    pub agreement: Vec<RaterAgreement>,
}

fn aggregate(cfg: &PipelineConfig, layout: &Layout) -> Result<Provenance, CliError> {
    require(&layout.sessions(), "plan")?;
    let mut store = SessionStore::open(&layout.sessions())?;
    let session_id = cfg.session.id.clone();
    let records = store.export(&session_id, "aggregate")?;
    if records.is_empty() {
        return Err(CliError::Validation(format!(
            "session `{session_id}` has no main-round scores yet"
        )));
    }
    let session_prov = store.get(&session_id)?.provenance.clone();
    let mut scores_prov = Provenance::new("aggregate", Some(cfg.seed));
    if let Some(p) = session_prov {
        scores_prov.inputs = p.inputs;
    }
    let scores = ScoresFile {
        provenance: scores_prov,
        session_id: session_id.clone(),
        records,
    };
    let scores_bytes = to_json(&scores);
    write_atomic(&layout.scores(), &scores_bytes)?;
    let records = scores.records;

    let mut models = Vec::new();
    let mut per_variable = VariableTable::new();
    for model in cfg.model_ids() {
        let recs: Vec<ScoreRecord> = records.iter().filter(|r| r.model_id == model).cloned().collect();
        if recs.is_empty() {
            continue;
        }
        models.push(aggregate_model(&recs, &model).map_err(|e| CliError::Validation(format!("model `{model}`: {e}")))?);
        per_variable.insert(model, aggregate_by_variable(&recs));
    }
    let raters: Vec<&str> = cfg.session.raters.iter().map(|r| r.id.as_str()).collect();
    let mut agreements = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let of = |r: &str| -> Vec<ScoreRecord> { records.iter().filter(|x| x.rater_id == r).cloned().collect() };
            let (ra, rb) = (of(a), of(b));
            if ra.is_empty() || rb.is_empty() {
                continue;
            }
            match agreement(&ra, &rb) {
                Ok(summary) => agreements.push(RaterAgreement {
                    rater_a: a.to_string(),
                    rater_b: b.to_string(),
                    summary,
                }),
                Err(e) => tracing::warn!(rater_a = a, rater_b = b, error = %e, "agreement skipped"),
            }
        }
    }
    let provenance = Provenance::new("aggregate", Some(cfg.seed)).with_input("scores", &scores_bytes);
    let file = AggregateFile {
        provenance: provenance.clone(),
        session_id,
        models,
        per_variable,
        agreement: agreements,
    };
    write_atomic(&layout.aggregate(), &to_json(&file))?;
    println!(
        "aggregated {} records over {} model(s) -> {}",
        records.len(),
        file.models.len(),
        layout.aggregate().display()
    );
    Ok(provenance)
}

fn report(cfg: &PipelineConfig, layout: &Layout) -> Result<Provenance, CliError> {
    let path = layout.aggregate();
    if !path.exists() {
        return Err(CliError::MissingAggregate(path));
    }
    let (agg, bytes): (AggregateFile, _) = read_json(&path)?;
    let provenance = Provenance::new("report", None).with_input("aggregate", &bytes);
    let models: Vec<String> = cfg
        .report_models()
        .into_iter()
        .filter(|m| agg.models.iter().any(|s| &s.model_id == m))
        .collect();
    let dir = layout.report_dir();
    fs::create_dir_all(&dir)?;
    for (kind, stem) in [
        (ReportKind::PerModel, "per_model"),
        (ReportKind::PerVariable, "per_variable"),
    ] {
        let spec = ReportSpec {
            kind,
            models: models.clone(),
            decimals: cfg.report.decimals,
            formats: cfg.report.formats.clone(),
        };
        let rendered = match kind {
            ReportKind::PerModel => render_per_model(&spec, &agg.models)?,
            ReportKind::PerVariable => render_per_variable(&spec, &agg.per_variable)?,
        };
        for (format, body) in &rendered.documents {
            let header = match format {
                ReportFormat::Markdown => format!("<!-- embryocap {} -->\n\n", provenance.summary()),
                ReportFormat::Tsv => format!("# embryocap {}\n", provenance.summary()),
            };
            let file = dir.join(format!("{stem}.{}", format.extension()));
            write_atomic(&file, format!("{header}{body}").as_bytes())?;
            println!("wrote {}", file.display());
        }
    }
    Ok(provenance)
}
