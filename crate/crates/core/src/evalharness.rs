//! Contamination, clean and calibration in-context settings, model scoring,
//! the performance-gap metric, instruction-data export and reports.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BenchmarkSpec, Dataset, Sample, TaskKind};
use crate::par::{self, ExecMode};
use crate::provider::{GenerationRequest, Provider, RequestTag};
use crate::score::SimilarityScores;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no evaluation cases")]
    NoCases,
    #[error("cases mix settings {0} and {1}")]
    MixedSettings(Setting, Setting),
    #[error("calibrated dataset has {found} samples, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("calibrated sample {index} has id `{found}`, expected `{expected}`")]
    Misaligned {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("the {0} setting needs a calibrated dataset")]
    MissingCalibrated(Setting),
    #[error("the clean setting and extra shots need a non-empty training pool")]
    EmptyTrainPool,
    #[error("training-pool sample `{id}` comes from split `{split}`")]
    NotTrainSplit { id: String, split: String },
    #[error("sample `{0}` has no label")]
    MissingLabel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report csv: {0}")]
    Csv(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Contamination,
    Clean,
    Calibration,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Self::Contamination, Self::Clean, Self::Calibration];

    pub fn label(self) -> &'static str {
        match self {
            Self::Contamination => "Contamination",
            Self::Clean => "Clean",
            Self::Calibration => "Calibration",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// In-context prompt: instruction, labelled demonstrations, unlabelled query.
///
/// Rendered as
///
/// ```text
/// <instruction>
///
/// Input:
/// <field>: <text>
/// Answer: <label>
///
/// Input:
/// <field>: <text>
/// Answer:
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclPrompt {
    pub instruction: String,
    /// (rendered fields, label) per demonstration.
    pub shots: Vec<(String, String)>,
    pub query: String,
}

const BLOCK: &str = "\n\nInput:\n";
const ANSWER: &str = "\nAnswer:";

impl IclPrompt {
    pub fn render(&self) -> String {
        let mut out = self.instruction.clone();
        for (text, label) in &self.shots {
            out.push_str(BLOCK);
            out.push_str(text);
            out.push_str(ANSWER);
            out.push(' ');
            out.push_str(label);
        }
        out.push_str(BLOCK);
        out.push_str(&self.query);
        out.push_str(ANSWER);
        out
    }

    pub fn parse(prompt: &str) -> Option<Self> {
        let mut blocks = prompt.split(BLOCK);
        let instruction = blocks.next()?.to_string();
        let blocks: Vec<&str> = blocks.collect();
        let (last, shots) = blocks.split_last()?;
        let query = last.strip_suffix(ANSWER)?.to_string();
        let shots = shots
            .iter()
            .map(|b| {
                let (text, label) = b.rsplit_once(ANSWER)?;
                Some((text.to_string(), label.trim().to_string()))
            })
            .collect::<Option<Vec<_>>>()?;
        Some(IclPrompt {
            instruction,
            shots,
            query,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    /// The demonstration that defines the setting.
    pub demonstration: Sample,
    /// Further demonstrations from the training pool, shown before
    /// `demonstration` when more than one shot is configured.
    pub extra_demonstrations: Vec<Sample>,
    pub tested: Sample,
    pub setting: Setting,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseOptions {
    pub seed: u64,
    /// Demonstrations per prompt, at least 1.
    pub shots: usize,
}

impl Default for CaseOptions {
    fn default() -> Self {
        CaseOptions { seed: 0, shots: 1 }
    }
}

fn check_train_pool(pool: Option<&Dataset>) -> Result<&[Sample], EvalError> {
    let pool = pool.map(|d| d.samples.as_slice()).unwrap_or(&[]);
    if pool.is_empty() {
        return Err(EvalError::EmptyTrainPool);
    }
    if let Some(s) = pool
        .iter()
        .find(|s| s.split.as_deref().is_some_and(|sp| sp != "train"))
    {
        return Err(EvalError::NotTrainSplit {
            id: s.id.clone(),
            split: s.split.clone().unwrap_or_default(),
        });
    }
    Ok(pool)
}

/// Draws `count` pool indices: a seeded shuffle consumed in order and
/// reshuffled when exhausted, so no index repeats before the pool is used up.
fn draw_without_replacement(pool_len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut deck: Vec<usize> = Vec::new();
    while out.len() < count {
        if deck.is_empty() {
            deck = (0..pool_len).collect();
            deck.shuffle(rng);
            deck.reverse();
        }
        out.push(deck.pop().expect("deck refilled"));
    }
    out
}

pub fn render_prompt(spec: &BenchmarkSpec, demos: &[&Sample], tested: &Sample) -> String {
    IclPrompt {
        instruction: spec.render_instruction(tested),
        shots: demos
            .iter()
            .map(|d| (d.render_fields(), d.label.clone()))
            .collect(),
        query: tested.render_fields(),
    }
    .render()
}

/// Pairs every sample of `dataset` with its demonstration(s) for `setting`.
///
/// Contamination shows the tested sample itself, clean shows a seeded random
/// training sample, calibration shows the original and tests its calibrated
/// rewrite (`calibrated` aligned to `dataset` by position and id).
pub fn build_cases(
    dataset: &Dataset,
    calibrated: Option<&Dataset>,
    train_pool: Option<&Dataset>,
    setting: Setting,
    opts: CaseOptions,
) -> Result<Vec<EvalCase>, EvalError> {
    let n = dataset.len();
    if setting == Setting::Calibration {
        let cal = calibrated.ok_or(EvalError::MissingCalibrated(setting))?;
        if cal.len() != n {
            return Err(EvalError::LengthMismatch {
                expected: n,
                found: cal.len(),
            });
        }
        for (index, (a, b)) in dataset.samples.iter().zip(&cal.samples).enumerate() {
            if a.id != b.id {
                return Err(EvalError::Misaligned {
                    index,
                    expected: a.id.clone(),
                    found: b.id.clone(),
                });
            }
        }
    }
    let clean_demos = if setting == Setting::Clean {
        let pool = check_train_pool(train_pool)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        draw_without_replacement(pool.len(), n, &mut rng)
            .into_iter()
            .map(|i| &pool[i])
            .collect()
    } else {
        Vec::new()
    };
    let extra_count = opts.shots.max(1) - 1;
    let extras: Vec<Vec<&Sample>> = if extra_count > 0 {
        let pool = check_train_pool(train_pool)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_5407_0000_0001);
        (0..n)
            .map(|_| {
                draw_without_replacement(pool.len(), extra_count, &mut rng)
                    .into_iter()
                    .map(|i| &pool[i])
                    .collect()
            })
            .collect()
    } else {
        vec![Vec::new(); n]
    };

    let spec = &dataset.spec;
    let mut cases = Vec::with_capacity(n);
    for (i, sample) in dataset.samples.iter().enumerate() {
        let (demonstration, tested) = match setting {
            Setting::Contamination => (sample, sample),
            Setting::Clean => (clean_demos[i], sample),
            Setting::Calibration => (sample, &calibrated.expect("checked above").samples[i]),
        };
        let mut demos = extras[i].clone();
        demos.push(demonstration);
        cases.push(EvalCase {
            prompt: render_prompt(spec, &demos, tested),
            demonstration: demonstration.clone(),
            extra_demonstrations: extras[i].iter().map(|s| (*s).clone()).collect(),
            tested: tested.clone(),
            setting,
        });
    }
    Ok(cases)
}

/// Lowercase, `_`/`-` to spaces, punctuation other than `/` dropped,
/// whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '/')
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// The last number in `text`, ignoring thousands separators.
pub fn final_number(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut last = None;
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let negative =
                i > 0 && chars[i - 1] == '-' && (i < 2 || !chars[i - 2].is_ascii_alphanumeric());
            let mut s = String::new();
            let mut seen_dot = false;
            while i < chars.len() {
                let c = chars[i];
                let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if c.is_ascii_digit() {
                    s.push(c);
                } else if c == ',' && next_digit {
                } else if c == '.' && next_digit && !seen_dot {
                    seen_dot = true;
                    s.push(c);
                } else {
                    break;
                }
                i += 1;
            }
            if let Ok(v) = s.parse::<f64>() {
                last = Some(if negative { -v } else { v });
            }
        } else {
            i += 1;
        }
    }
    last
}

fn label_in(prediction: &str, spec: &BenchmarkSpec) -> Option<String> {
    let options: Vec<String> = spec
        .label_set
        .as_ref()?
        .iter()
        .map(|l| normalize_answer(l))
        .collect();
    let padded = format!(" {prediction} ");
    options
        .iter()
        .filter_map(|opt| padded.find(&format!(" {opt} ")).map(|at| (opt, at)))
        .max_by(|(a, at_a), (b, at_b)| a.len().cmp(&b.len()).then(at_b.cmp(at_a)))
        .map(|(opt, _)| opt.clone())
}

/// Whether a model response answers `label` under the benchmark's rules.
pub fn is_correct(prediction: &str, label: &str, spec: &BenchmarkSpec) -> bool {
    if spec.task_kind == TaskKind::Math {
        return match (final_number(prediction), final_number(label)) {
            (Some(p), Some(l)) => (p - l).abs() < 1e-9,
            _ => false,
        };
    }
    let gold = normalize_answer(label);
    let canon = |s: String| {
        spec.label_synonyms
            .iter()
            .find(|(k, _)| normalize_answer(k) == s)
            .map_or(s, |(_, v)| normalize_answer(v))
    };
    let pred = canon(normalize_answer(prediction));
    if pred == gold {
        return true;
    }
    label_in(&pred, spec).map(canon).is_some_and(|p| p == gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    Accuracy {
        value: f64,
    },
    Rouge {
        rouge1: f64,
        rouge2: f64,
        #[serde(rename = "rougeL")]
        rouge_l: f64,
    },
}

impl Metric {
    /// Single number used for the performance gap: accuracy, or ROUGE-L for
    /// generation tasks.
    pub fn headline(&self) -> f64 {
        match *self {
            Metric::Accuracy { value } => value,
            Metric::Rouge { rouge_l, .. } => rouge_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    pub setting: Setting,
    pub metric: Metric,
    pub n: usize,
    /// Cases whose provider call failed; they count as incorrect.
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub tested_id: String,
    pub prediction: Option<String>,
    pub correct: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: PerfSummary,
    pub cases: Vec<CaseResult>,
}

pub fn evaluate<P: Provider + ?Sized>(
    cases: &[EvalCase],
    spec: &BenchmarkSpec,
    provider: &P,
    mode: ExecMode,
) -> Result<Evaluation, EvalError> {
    let first = cases.first().ok_or(EvalError::NoCases)?.setting;
    if let Some(other) = cases.iter().find(|c| c.setting != first) {
        return Err(EvalError::MixedSettings(first, other.setting));
    }
    let generation = spec.task_kind == TaskKind::Generation;
    let scored = par::map(mode, cases, |case| {
        let req = GenerationRequest::new(case.prompt.clone(), RequestTag::Evaluate);
        match provider.generate(&req) {
            Ok(out) => {
                let prediction = out.trim().to_string();
                let (correct, rouge) = if generation {
                    (
                        false,
                        SimilarityScores::rouge(&prediction, &case.tested.label),
                    )
                } else {
                    (
                        is_correct(&prediction, &case.tested.label, spec),
                        SimilarityScores::default(),
                    )
                };
                (
                    CaseResult {
                        tested_id: case.tested.id.clone(),
                        prediction: Some(prediction),
                        correct,
                        error: None,
                    },
                    rouge,
                )
            }
            Err(e) => {
                log::warn!("case `{}` failed: {e}", case.tested.id);
                (
                    CaseResult {
                        tested_id: case.tested.id.clone(),
                        prediction: None,
                        correct: false,
                        error: Some(e.to_string()),
                    },
                    SimilarityScores::default(),
                )
            }
        }
    });
    let n = cases.len();
    let errors = scored.iter().filter(|(c, _)| c.error.is_some()).count();
    let metric = if generation {
        let r: Vec<SimilarityScores> = scored.iter().map(|(_, r)| *r).collect();
        let m = SimilarityScores::mean(&r);
        Metric::Rouge {
            rouge1: m.rouge1,
            rouge2: m.rouge2,
            rouge_l: m.rouge_l,
        }
    } else {
        let correct = scored.iter().filter(|(c, _)| c.correct).count();
        Metric::Accuracy {
            value: (correct as f64 / n as f64) * 100.0,
        }
    };
    Ok(Evaluation {
        summary: PerfSummary {
            setting: first,
            metric,
            n,
            errors,
        },
        cases: scored.into_iter().map(|(c, _)| c).collect(),
    })
}

/// How the calibration-vs-clean term is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// |cal − clean|: the gap between calibration and clean performance.
    #[default]
    CalVsClean,
    /// |cal − contam|: literal variant whose second term repeats the first,
    /// so `pg` is always 0.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGReport {
    pub pg_contam_cal: f64,
    pub pg_cal_clean: f64,
    pub pg: f64,
}

/// Positive `pg` means calibrated performance sits closer to clean than to
/// contaminated performance.
pub fn performance_gap(
    perf_contam: f64,
    perf_cal: f64,
    perf_clean: f64,
    mode: GapMode,
) -> PGReport {
    let pg_contam_cal = (perf_contam - perf_cal).abs();
    let pg_cal_clean = match mode {
        GapMode::CalVsClean => (perf_cal - perf_clean).abs(),
        GapMode::AsPrinted => (perf_cal - perf_contam).abs(),
    };
    PGReport {
        pg_contam_cal,
        pg_cal_clean,
        pg: pg_contam_cal - pg_cal_clean,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

pub fn instruction_record(sample: &Sample, spec: &BenchmarkSpec) -> InstructionRecord {
    InstructionRecord {
        instruction: spec.render_instruction(sample),
        input: sample.render_fields(),
        output: sample.label.clone(),
    }
}

/// Writes one `{instruction, input, output}` JSON line per sample and returns
/// the record count.
pub fn export_instruction_data(
    dataset: &Dataset,
    spec: &BenchmarkSpec,
    path: &Path,
) -> Result<usize, EvalError> {
    if let Some(s) = dataset.samples.iter().find(|s| s.label.is_empty()) {
        return Err(EvalError::MissingLabel(s.id.clone()));
    }
    let err = io_err(path);
    let mut w = BufWriter::new(File::create(path).map_err(&err)?);
    for s in &dataset.samples {
        let line = serde_json::to_string(&instruction_record(s, spec)).expect("record serializes");
        writeln!(w, "{line}").map_err(&err)?;
    }
    w.flush().map_err(&err)?;
    Ok(dataset.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub markdown: PathBuf,
}

/// One CSV row: `section,name,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub name: String,
    pub metric: String,
    pub value: f64,
}

pub fn report_rows(
    summaries: &[PerfSummary],
    pg: &PGReport,
    sims: &SimilarityScores,
) -> Vec<ReportRow> {
    let row = |section: &str, name: &str, metric: &str, value: f64| ReportRow {
        section: section.into(),
        name: name.into(),
        metric: metric.into(),
        value,
    };
    let mut rows = Vec::new();
    for s in summaries {
        let name = s.setting.label().to_lowercase();
        match s.metric {
            Metric::Accuracy { value } => rows.push(row("perf", &name, "accuracy", value)),
            Metric::Rouge {
                rouge1,
                rouge2,
                rouge_l,
            } => {
                rows.push(row("perf", &name, "rouge1", rouge1));
                rows.push(row("perf", &name, "rouge2", rouge2));
                rows.push(row("perf", &name, "rougeL", rouge_l));
            }
        }
        rows.push(row("perf", &name, "n", s.n as f64));
        rows.push(row("perf", &name, "errors", s.errors as f64));
    }
    rows.push(row("pg", "pg_contam_cal", "value", pg.pg_contam_cal));
    rows.push(row("pg", "pg_cal_clean", "value", pg.pg_cal_clean));
    rows.push(row("pg", "pg", "value", pg.pg));
    rows.push(row(
        "similarity",
        "calibrated_vs_original",
        "rouge1",
        sims.rouge1,
    ));
    rows.push(row(
        "similarity",
        "calibrated_vs_original",
        "rouge2",
        sims.rouge2,
    ));
    rows.push(row(
        "similarity",
        "calibrated_vs_original",
        "rougeL",
        sims.rouge_l,
    ));
    rows.push(row(
        "similarity",
        "calibrated_vs_original",
        "bleurt",
        sims.bleurt,
    ));
    rows
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| EvalError::Csv(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<ReportRow>, _>>()
        .map_err(|e| EvalError::Csv(e.to_string()))
}

pub fn render_markdown(
    summaries: &[PerfSummary],
    pg: &PGReport,
    sims: &SimilarityScores,
    scorer_label: &str,
) -> String {
    let mut md = String::new();
    let rouge = summaries
        .iter()
        .any(|s| matches!(s.metric, Metric::Rouge { .. }));
    md.push_str("## Performance\n\n");
    if rouge {
        md.push_str("| Evaluation Type | rouge-1 | rouge-2 | rouge-L | n | errors |\n|---|---|---|---|---|---|\n");
    } else {
        md.push_str("| Evaluation Type | Accuracy | n | errors |\n|---|---|---|---|\n");
    }
    for s in summaries {
        match s.metric {
            Metric::Accuracy { value } => md.push_str(&format!(
                "| {} | {:.2} | {} | {} |\n",
                s.setting.label(),
                value,
                s.n,
                s.errors
            )),
            Metric::Rouge {
                rouge1,
                rouge2,
                rouge_l,
            } => md.push_str(&format!(
                "| {} | {:.2} | {:.2} | {:.2} | {} | {} |\n",
                s.setting.label(),
                rouge1,
                rouge2,
                rouge_l,
                s.n,
                s.errors
            )),
        }
    }
    md.push_str("\n## Performance gap\n\n| Quantity | Value |\n|---|---|\n");
    md.push_str(&format!(
        "| PG(contamination, calibration) | {:.2} |\n",
        pg.pg_contam_cal
    ));
    md.push_str(&format!(
        "| PG(calibration, clean) | {:.2} |\n",
        pg.pg_cal_clean
    ));
    md.push_str(&format!("| PG | {:.2} |\n", pg.pg));
    md.push_str(&format!(
        "\n## Calibrated vs. original (mean)\n\nROUGE is F1; the learned-metric column uses: {scorer_label}.\n\n| Rouge-1 | Rouge-2 | Rouge-L | BLEURT |\n|---|---|---|---|\n| {:.2} | {:.2} | {:.2} | {:.2} |\n",
        sims.rouge1, sims.rouge2, sims.rouge_l, sims.bleurt
    ));
    md
}

/// Writes `report.csv` and `report.md` into `dir`.
pub fn emit_report(
    summaries: &[PerfSummary],
    pg: &PGReport,
    sims: &SimilarityScores,
    scorer_label: &str,
    dir: &Path,
) -> Result<ReportPaths, EvalError> {
    if summaries.is_empty() {
        return Err(EvalError::NoCases);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| EvalError::Csv(e.to_string()))?;
    for row in report_rows(summaries, pg, sims) {
        w.serialize(row)
            .map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let md_path = dir.join("report.md");
    fs::write(&md_path, render_markdown(summaries, pg, sims, scorer_label))
        .map_err(io_err(&md_path))?;
    Ok(ReportPaths {
        csv: csv_path,
        markdown: md_path,
    })
}
