//! Run modes: `calibrate`, `evaluate`, `ablate` and `export-ft`.
//!
//! Every command reads a [`RunConfig`], builds the provider and scorer it
//! names, and writes its artifacts under the configured output directory.

pub mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ProviderKind, RunConfig, ScorerKind};

use crate::corpus::{
    load_dataset, select_calibration_text, write_dataset, BenchmarkSpec, CorpusError, Dataset,
};
use crate::evalharness::{
    build_cases, emit_report, evaluate, export_instruction_data, performance_gap, CaseOptions,
    CaseResult, EvalError, GapMode, PGReport, PerfSummary, ReportPaths, Setting,
};
use crate::par::{self, ExecMode};
use crate::pipeline::{calibrate_dataset, CalibrationRun, PipelineConfig, PipelineError};
use crate::provider::{
    CachedProvider, MockProvider, MockRules, Provider, ProviderError, RemoteConfig, RemoteProvider,
    ResponseCache,
};
use crate::rewrite::{CompositionOrder, RewriteConfig};
use crate::score::{
    similarity, LexicalScorer, RemoteScorer, ScoreError, Scorer, SelectionPolicy, SimilarityScores,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown benchmark `{0}` (not a preset and not defined under [benchmarks])")]
    UnknownBenchmark(String),
    #[error("calibrated dataset {0} not found; run `calibrate` first or set `calibrated`")]
    MissingCalibrated(PathBuf),
    #[error("scoring service at {0} is not ready")]
    ScorerNotReady(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Command-line settings that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub policy: Option<SelectionPolicy>,
    pub order: Option<CompositionOrder>,
    pub no_detector: bool,
    pub provider: Option<ProviderKind>,
    pub scorer: Option<ScorerKind>,
    pub skip_errors: bool,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }
        if let Some(o) = self.order {
            cfg.rewrite.order = o;
        }
        if self.no_detector {
            cfg.detector = false;
        }
        if let Some(p) = self.provider {
            cfg.provider.kind = p;
        }
        if let Some(s) = self.scorer {
            cfg.scorer.kind = s;
        }
        if self.skip_errors {
            cfg.skip_errors = true;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
    }
}

pub fn build_provider(cfg: &RunConfig) -> Result<Box<dyn Provider>, CliError> {
    let base: Box<dyn Provider> = match cfg.provider.kind {
        ProviderKind::Mock => Box::new(MockProvider::with_rules(MockRules {
            templates: cfg.rewrite.prompts.clone(),
            equivalence_threshold: cfg.provider.mock_equivalence_threshold,
        })),
        ProviderKind::Remote => {
            let (endpoint, model, api_key) = cfg.remote_settings();
            Box::new(RemoteProvider::new(RemoteConfig {
                endpoint: endpoint.ok_or_else(|| {
                    CliError::Config(format!(
                        "remote provider needs provider.endpoint or ${}",
                        config::ENV_PROVIDER_URL
                    ))
                })?,
                model: model.ok_or_else(|| {
                    CliError::Config(format!(
                        "remote provider needs provider.model or ${}",
                        config::ENV_PROVIDER_MODEL
                    ))
                })?,
                api_key,
                max_attempts: cfg.provider.max_attempts,
                backoff_ms: cfg.provider.backoff_ms,
                timeout_secs: cfg.provider.timeout_secs,
            })?)
        }
    };
    Ok(match cfg.cache_dir() {
        Some(dir) => Box::new(CachedProvider::new(base, ResponseCache::open(dir)?)),
        None => base,
    })
}

/// The remote scorer is only returned once its `/healthz` answers 200.
pub fn build_scorer(cfg: &RunConfig) -> Result<Box<dyn Scorer>, CliError> {
    match cfg.scorer.kind {
        ScorerKind::Fallback => {
            log::warn!(
                "no scoring service configured; selection uses the lexical fallback, not BLEURT"
            );
            Ok(Box::new(LexicalScorer))
        }
        ScorerKind::Remote => {
            let url = cfg.scorer_url().ok_or_else(|| {
                CliError::Config(format!(
                    "remote scorer needs scorer.url or ${}",
                    config::ENV_SCORER_URL
                ))
            })?;
            let scorer =
                RemoteScorer::new(&url, Duration::from_secs(cfg.scorer.timeout_secs.max(1)));
            if !scorer.healthy()? {
                return Err(CliError::ScorerNotReady(url));
            }
            Ok(Box::new(scorer))
        }
    }
}

pub fn pipeline_config(cfg: &RunConfig) -> PipelineConfig {
    PipelineConfig {
        rewrite: cfg.rewrite.clone(),
        detector: cfg.detector,
        policy: cfg.policy,
        skip_errors: cfg.skip_errors,
        mode: cfg.exec_mode(),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let err = io_err(path);
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(&err)?);
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("serializable")).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

fn similarity_markdown(
    benchmark: &str,
    method: &str,
    s: &SimilarityScores,
    scorer_label: &str,
) -> String {
    format!(
        "| Dataset | Method | Rouge-1 | Rouge-2 | Rouge-L | BLEURT |\n|---|---|---|---|---|---|\n| {benchmark} | {method} | {:.2} | {:.2} | {:.2} | {:.2} |\n\nBLEURT column scorer: {scorer_label}\n",
        s.rouge1, s.rouge2, s.rouge_l, s.bleurt
    )
}

#[derive(Debug, Clone)]
pub struct CalibrateOutput {
    pub run: CalibrationRun,
    pub calibrated: PathBuf,
    pub meta: PathBuf,
    pub similarity: PathBuf,
}

pub fn calibrate_with(
    cfg: &RunConfig,
    dataset: &Dataset,
    provider: &dyn Provider,
    scorer: &dyn Scorer,
) -> Result<CalibrationRun, CliError> {
    let pcfg = pipeline_config(cfg);
    Ok(par::with_parallelism(cfg.provider.parallelism, || {
        calibrate_dataset(dataset, &pcfg, provider, scorer)
    })?)
}

/// Calibrates the dataset and writes `calibrated.jsonl`,
/// `calibration_meta.jsonl` and `similarity.md` under the output directory.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<CalibrateOutput, CliError> {
    let spec = cfg.benchmark_spec()?;
    let dataset = load_dataset(&cfg.dataset, &spec)?;
    let provider = build_provider(cfg)?;
    let scorer = build_scorer(cfg)?;
    let run = calibrate_with(cfg, &dataset, provider.as_ref(), scorer.as_ref())?;

    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let calibrated = cfg.calibrated_path();
    write_dataset(&calibrated, &run.dataset.samples)?;
    let meta = cfg.output_dir.join("calibration_meta.jsonl");
    write_jsonl(&meta, &run.meta)?;
    let similarity = cfg.output_dir.join("similarity.md");
    let md = similarity_markdown(
        &spec.name,
        "Clean-Eval",
        &run.mean_similarity(),
        scorer.label(),
    );
    fs::write(&similarity, md).map_err(io_err(&similarity))?;
    log::info!(
        "calibrated {} samples ({} kept verbatim, {} failures)",
        run.dataset.len(),
        run.meta.iter().filter(|m| m.selected_original).count(),
        run.failures()
    );
    Ok(CalibrateOutput {
        run,
        calibrated,
        meta,
        similarity,
    })
}

fn load_train_pool(cfg: &RunConfig, spec: &BenchmarkSpec) -> Result<Option<Dataset>, CliError> {
    cfg.train_pool
        .as_ref()
        .map(|p| load_dataset(p, spec))
        .transpose()
        .map_err(CliError::from)
}

fn run_setting(
    cfg: &RunConfig,
    dataset: &Dataset,
    calibrated: Option<&Dataset>,
    train_pool: Option<&Dataset>,
    setting: Setting,
    provider: &dyn Provider,
) -> Result<(PerfSummary, Vec<CaseResult>), CliError> {
    let opts = CaseOptions {
        seed: cfg.seed,
        shots: cfg.eval.shots,
    };
    let cases = build_cases(dataset, calibrated, train_pool, setting, opts)?;
    let e = par::with_parallelism(cfg.provider.parallelism, || {
        evaluate(&cases, &dataset.spec, provider, cfg.exec_mode())
    })?;
    Ok((e.summary, e.cases))
}

/// Mean similarity of calibrated to original calibration texts; the
/// learned-metric column comes from `scorer`.
pub fn dataset_similarity(
    original: &Dataset,
    calibrated: &Dataset,
    scorer: &dyn Scorer,
    mode: ExecMode,
) -> Result<SimilarityScores, CliError> {
    let spec = &original.spec;
    let pairs: Vec<_> = original.samples.iter().zip(&calibrated.samples).collect();
    let scored = par::map(
        mode,
        &pairs,
        |(o, c)| -> Result<SimilarityScores, CliError> {
            let refs = select_calibration_text(o, spec)?;
            let texts = select_calibration_text(c, spec)?;
            let bleurt = crate::score::candidate_score(&texts, &refs, scorer)?;
            Ok(similarity(&texts, &refs, bleurt))
        },
    );
    let scored = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SimilarityScores::mean(&scored))
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub summaries: Vec<PerfSummary>,
    pub pg: PGReport,
    pub report: ReportPaths,
}

#[derive(Serialize)]
struct CaseLine<'a> {
    setting: Setting,
    #[serde(flatten)]
    result: &'a CaseResult,
}

/// Runs the contamination, clean and calibration settings and writes
/// `report.csv`, `report.md` and `cases.jsonl`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateOutput, CliError> {
    let spec = cfg.benchmark_spec()?;
    let cal_path = cfg.calibrated_path();
    if !cal_path.exists() {
        return Err(CliError::MissingCalibrated(cal_path));
    }
    let dataset = load_dataset(&cfg.dataset, &spec)?;
    let calibrated = load_dataset(&cal_path, &spec)?;
    let train_pool = load_train_pool(cfg, &spec)?;
    let provider = build_provider(cfg)?;
    let scorer = build_scorer(cfg)?;

    let mut summaries = Vec::new();
    let mut lines = Vec::new();
    for setting in Setting::ALL {
        let (summary, cases) = run_setting(
            cfg,
            &dataset,
            Some(&calibrated),
            train_pool.as_ref(),
            setting,
            provider.as_ref(),
        )?;
        summaries.push(summary);
        lines.extend(cases.into_iter().map(|c| (setting, c)));
    }
    let perf = |s: Setting| {
        summaries
            .iter()
            .find(|p| p.setting == s)
            .expect("all settings run")
            .metric
            .headline()
    };
    let pg = performance_gap(
        perf(Setting::Contamination),
        perf(Setting::Calibration),
        perf(Setting::Clean),
        cfg.eval.gap_mode(),
    );
    let sims = dataset_similarity(&dataset, &calibrated, scorer.as_ref(), cfg.exec_mode())?;
    let report = emit_report(&summaries, &pg, &sims, scorer.label(), &cfg.output_dir)?;
    let cases: Vec<CaseLine> = lines
        .iter()
        .map(|(setting, result)| CaseLine {
            setting: *setting,
            result,
        })
        .collect();
    write_jsonl(&cfg.output_dir.join("cases.jsonl"), &cases)?;
    Ok(EvaluateOutput {
        summaries,
        pg,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    /// Score tier per rewrite method (worst/middle/best).
    Tier,
    /// Composition order of paraphrase and back-translation.
    Order,
    /// Methods run without the equivalence detector.
    Detector,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tier => "tier",
            Self::Order => "order",
            Self::Detector => "detector",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Method block for the tier axis (`BT` or `Para`).
    pub block: Option<String>,
    pub label: String,
    pub calibration: f64,
    pub pg: PGReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub benchmark: String,
    pub contamination: f64,
    pub clean: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Performance gap for the tier and order axes, calibrated performance
    /// for the detector axis.
    pub fn to_markdown(&self) -> String {
        let b = &self.benchmark;
        let mut md = String::new();
        match self.axis {
            AblationAxis::Tier => {
                md.push_str(&format!(
                    "Performance gap by score tier.\n\n| Method | Score | {b} |\n|---|---|---|\n"
                ));
                let mut last: Option<&str> = None;
                for r in &self.rows {
                    let block = r.block.as_deref().unwrap_or("");
                    let shown = if last == Some(block) { "" } else { block };
                    last = Some(block);
                    md.push_str(&format!("| {shown} | {} | {:.2} |\n", r.label, r.pg.pg));
                }
            }
            AblationAxis::Order => {
                md.push_str(&format!(
                    "Performance gap by composition order.\n\n| Order | {b} |\n|---|---|\n"
                ));
                for r in &self.rows {
                    md.push_str(&format!("| {} | {:.2} |\n", r.label, r.pg.pg));
                }
            }
            AblationAxis::Detector => {
                md.push_str(&format!(
                    "Calibrated performance without equivalence detector.\n\n| Method | {b} |\n|---|---|\n"
                ));
                for r in &self.rows {
                    md.push_str(&format!("| {} | {:.2} |\n", r.label, r.calibration));
                }
            }
        }
        md.push_str(&format!(
            "\nContamination: {:.2}. Clean: {:.2}.\n",
            self.contamination, self.clean
        ));
        md
    }

    pub fn labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }
}

struct Variant {
    block: Option<&'static str>,
    label: String,
    slug: String,
    rewrite: RewriteConfig,
    policy: SelectionPolicy,
    detector: bool,
}

fn bt_only(base: &RewriteConfig) -> RewriteConfig {
    RewriteConfig {
        levels: Vec::new(),
        combine: false,
        ..base.clone()
    }
}

fn para_only(base: &RewriteConfig) -> RewriteConfig {
    RewriteConfig {
        pivots: Vec::new(),
        combine: false,
        ..base.clone()
    }
}

fn variants(cfg: &RunConfig, axis: AblationAxis) -> Vec<Variant> {
    let base = &cfg.rewrite;
    match axis {
        AblationAxis::Tier => {
            let mut out = Vec::new();
            for (block, rewrite) in [("BT", bt_only(base)), ("Para", para_only(base))] {
                for policy in SelectionPolicy::ALL {
                    out.push(Variant {
                        block: Some(block),
                        label: policy.tier_label().to_string(),
                        slug: format!("{}-{}", block.to_lowercase(), policy.tier_label()),
                        rewrite: rewrite.clone(),
                        policy,
                        detector: cfg.detector,
                    });
                }
            }
            out
        }
        AblationAxis::Order => [CompositionOrder::ParaThenBt, CompositionOrder::BtThenPara]
            .into_iter()
            .map(|order| Variant {
                block: None,
                label: order.label().to_string(),
                slug: match order {
                    CompositionOrder::ParaThenBt => "para-bt".into(),
                    CompositionOrder::BtThenPara => "bt-para".into(),
                },
                rewrite: RewriteConfig {
                    order,
                    combine: true,
                    ..base.clone()
                },
                policy: cfg.policy,
                detector: cfg.detector,
            })
            .collect(),
        AblationAxis::Detector => [
            ("BT", bt_only(base)),
            ("Para", para_only(base)),
            ("Clean-Eval", base.clone()),
        ]
        .into_iter()
        .map(|(label, rewrite)| Variant {
            block: None,
            label: label.to_string(),
            slug: format!("{}-no-detector", label.to_lowercase()),
            rewrite,
            policy: cfg.policy,
            detector: false,
        })
        .collect(),
    }
}

/// Runs the pipeline variants along `axis` and writes
/// `ablation_<axis>.md` and `ablation_<axis>.json`. Calibrated datasets of
/// each variant land under `ablate/<axis>/<variant>/`.
pub fn cmd_ablate(cfg: &RunConfig, axis: AblationAxis) -> Result<AblationReport, CliError> {
    let spec = cfg.benchmark_spec()?;
    let dataset = load_dataset(&cfg.dataset, &spec)?;
    let train_pool = load_train_pool(cfg, &spec)?;
    let provider = build_provider(cfg)?;
    let scorer = build_scorer(cfg)?;
    let provider = provider.as_ref();

    let (contam, _) = run_setting(cfg, &dataset, None, None, Setting::Contamination, provider)?;
    let (clean, _) = run_setting(
        cfg,
        &dataset,
        None,
        train_pool.as_ref(),
        Setting::Clean,
        provider,
    )?;
    let contamination = contam.metric.headline();
    let clean = clean.metric.headline();
    let gap_mode: GapMode = cfg.eval.gap_mode();

    let mut rows = Vec::new();
    for v in variants(cfg, axis) {
        let mut vcfg = cfg.clone();
        vcfg.rewrite = v.rewrite;
        vcfg.policy = v.policy;
        vcfg.detector = v.detector;
        let run = calibrate_with(&vcfg, &dataset, provider, scorer.as_ref())?;
        let dir = cfg
            .output_dir
            .join("ablate")
            .join(axis.to_string())
            .join(&v.slug);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_dataset(&dir.join("calibrated.jsonl"), &run.dataset.samples)?;
        write_jsonl(&dir.join("calibration_meta.jsonl"), &run.meta)?;
        let (cal, _) = run_setting(
            cfg,
            &dataset,
            Some(&run.dataset),
            None,
            Setting::Calibration,
            provider,
        )?;
        let calibration = cal.metric.headline();
        rows.push(AblationRow {
            block: v.block.map(str::to_string),
            label: v.label,
            calibration,
            pg: performance_gap(contamination, calibration, clean, gap_mode),
        });
    }
    let report = AblationReport {
        axis,
        benchmark: spec.name.clone(),
        contamination,
        clean,
        rows,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let md = cfg.output_dir.join(format!("ablation_{axis}.md"));
    fs::write(&md, report.to_markdown()).map_err(io_err(&md))?;
    let json = cfg.output_dir.join(format!("ablation_{axis}.json"));
    fs::write(
        &json,
        serde_json::to_string_pretty(&report).expect("serializable"),
    )
    .map_err(io_err(&json))?;
    Ok(report)
}

/// Exports instruction data for the original test set and, when present, the
/// calibrated one: `instruction_original.jsonl`, `instruction_calibrated.jsonl`.
pub fn cmd_export_ft(cfg: &RunConfig) -> Result<Vec<(PathBuf, usize)>, CliError> {
    let spec = cfg.benchmark_spec()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let mut written = Vec::new();
    let original = load_dataset(&cfg.dataset, &spec)?;
    let path = cfg.output_dir.join("instruction_original.jsonl");
    written.push((
        path.clone(),
        export_instruction_data(&original, &spec, &path)?,
    ));
    let cal_path = cfg.calibrated_path();
    if cal_path.exists() {
        let calibrated = load_dataset(&cal_path, &spec)?;
        let path = cfg.output_dir.join("instruction_calibrated.jsonl");
        written.push((
            path.clone(),
            export_instruction_data(&calibrated, &spec, &path)?,
        ));
    }
    Ok(written)
}
