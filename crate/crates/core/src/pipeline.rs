//! Whole-sample calibration: select fields, generate candidates, filter,
//! select one rewrite, and write it back into the sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{select_calibration_text, BenchmarkSpec, CorpusError, Dataset, Sample};
use crate::filter::{filter_candidates_detailed, FilterError, VerdictKind};
use crate::par::{self, ExecMode};
use crate::provider::Provider;
use crate::rewrite::{generate_candidates, RewriteConfig, RewriteError};
use crate::score::{select, ScoreError, Scorer, SelectionPolicy, SimilarityScores};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sample `{id}`: {source}")]
    Corpus {
        id: String,
        #[source]
        source: CorpusError,
    },
    #[error("sample `{id}`: {source}")]
    Rewrite {
        id: String,
        #[source]
        source: RewriteError,
    },
    #[error("sample `{id}`: {source}")]
    Filter {
        id: String,
        #[source]
        source: FilterError,
    },
    #[error("sample `{id}`: {source}")]
    Score {
        id: String,
        #[source]
        source: ScoreError,
    },
}

impl PipelineError {
    pub fn sample_id(&self) -> &str {
        match self {
            Self::Corpus { id, .. }
            | Self::Rewrite { id, .. }
            | Self::Filter { id, .. }
            | Self::Score { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub rewrite: RewriteConfig,
    pub detector: bool,
    pub policy: SelectionPolicy,
    /// Keep the original text of samples that fail instead of aborting.
    pub skip_errors: bool,
    pub mode: ExecMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rewrite: RewriteConfig::default(),
            detector: true,
            policy: SelectionPolicy::Lowest,
            skip_errors: false,
            mode: ExecMode::default(),
        }
    }
}

/// Per-sample record of what the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub id: String,
    /// Provenance of the selected candidate, `original` for the verbatim text.
    pub provenance: String,
    pub selected_original: bool,
    pub candidate_count: usize,
    pub original_count: usize,
    pub kept_count: usize,
    /// Every rewrite was rejected by the equivalence judge.
    pub fell_back: bool,
    pub unparseable_verdicts: usize,
    /// Learned-metric score of each candidate that survived filtering.
    pub kept_scores: Vec<f64>,
    /// Selected candidate against the original calibration text.
    pub scores: SimilarityScores,
    /// Set when the sample failed and `skip_errors` kept the original.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSample {
    pub sample: Sample,
    pub meta: CalibrationMeta,
}

/// Pivots the benchmark's own language cannot use.
pub fn effective_rewrite(cfg: &RewriteConfig, spec: &BenchmarkSpec) -> RewriteConfig {
    let mut out = cfg.clone();
    out.pivots
        .retain(|p| !p.eq_ignore_ascii_case(&spec.language));
    out
}

pub fn calibrate_sample<P, S>(
    sample: &Sample,
    spec: &BenchmarkSpec,
    cfg: &PipelineConfig,
    provider: &P,
    scorer: &S,
) -> Result<CalibratedSample, PipelineError>
where
    P: Provider + ?Sized,
    S: Scorer + ?Sized,
{
    let id = || sample.id.clone();
    let texts = select_calibration_text(sample, spec)
        .map_err(|source| PipelineError::Corpus { id: id(), source })?;
    let rewrite = effective_rewrite(&cfg.rewrite, spec);
    let candidates = generate_candidates(&texts, &spec.language, &rewrite, provider)
        .map_err(|source| PipelineError::Rewrite { id: id(), source })?;
    let outcome = filter_candidates_detailed(
        &texts,
        &candidates,
        provider,
        cfg.detector,
        &rewrite.prompts,
        cfg.mode,
    )
    .map_err(|source| PipelineError::Filter { id: id(), source })?;
    let selection = select(&outcome.kept, &texts, cfg.policy, scorer)
        .map_err(|source| PipelineError::Score { id: id(), source })?;

    let mut calibrated = sample.clone();
    for (field, text) in &selection.candidate.texts {
        calibrated.fields.insert(field.clone(), text.clone());
    }
    let unparseable_verdicts = outcome
        .verdicts
        .iter()
        .flatten()
        .filter(|v| v.kind == VerdictKind::Unparseable)
        .count();
    Ok(CalibratedSample {
        sample: calibrated,
        meta: CalibrationMeta {
            id: id(),
            provenance: selection.candidate.provenance_label(),
            selected_original: selection.candidate.is_original,
            candidate_count: candidates.len(),
            original_count: candidates.iter().filter(|c| c.is_original).count(),
            kept_count: outcome.kept.len(),
            fell_back: outcome.fell_back,
            unparseable_verdicts,
            kept_scores: selection.all_scores,
            scores: selection.scores,
            error: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    /// Same length and ids as the input, in input order.
    pub dataset: Dataset,
    pub meta: Vec<CalibrationMeta>,
}

impl CalibrationRun {
    /// Mean similarity of the calibrated texts to the originals.
    pub fn mean_similarity(&self) -> SimilarityScores {
        let s: Vec<SimilarityScores> = self.meta.iter().map(|m| m.scores).collect();
        SimilarityScores::mean(&s)
    }

    pub fn failures(&self) -> usize {
        self.meta.iter().filter(|m| m.error.is_some()).count()
    }
}

fn kept_original(sample: &Sample, spec: &BenchmarkSpec, err: &PipelineError) -> CalibratedSample {
    let scores = select_calibration_text(sample, spec)
        .map(|t| crate::score::similarity(&t, &t, 0.0))
        .unwrap_or_default();
    CalibratedSample {
        sample: sample.clone(),
        meta: CalibrationMeta {
            id: sample.id.clone(),
            provenance: "original".into(),
            selected_original: true,
            candidate_count: 0,
            original_count: 0,
            kept_count: 0,
            fell_back: false,
            unparseable_verdicts: 0,
            kept_scores: Vec::new(),
            scores,
            error: Some(err.to_string()),
        },
    }
}

/// Calibrates every sample, in parallel across samples when `cfg.mode` allows.
///
/// The first failing sample (in input order) aborts the run unless
/// `cfg.skip_errors` is set, in which case the failure is logged and the
/// sample is kept verbatim.
pub fn calibrate_dataset<P, S>(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    provider: &P,
    scorer: &S,
) -> Result<CalibrationRun, PipelineError>
where
    P: Provider + ?Sized,
    S: Scorer + ?Sized,
{
    let spec = &dataset.spec;
    let inner = PipelineConfig {
        mode: ExecMode::Sequential,
        ..cfg.clone()
    };
    let results = par::map(cfg.mode, &dataset.samples, |s| {
        calibrate_sample(s, spec, &inner, provider, scorer)
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut meta = Vec::with_capacity(results.len());
    for (sample, result) in dataset.samples.iter().zip(results) {
        let done = match result {
            Ok(c) => c,
            Err(e) if cfg.skip_errors => {
                log::warn!("keeping original: {e}");
                kept_original(sample, spec, &e)
            }
            Err(e) => return Err(e),
        };
        samples.push(done.sample);
        meta.push(done.meta);
    }
    Ok(CalibrationRun {
        dataset: Dataset {
            spec: spec.clone(),
            samples,
        },
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preset, FieldMap};
    use crate::provider::{MockProvider, MockRules};
    use crate::score::LexicalScorer;

    fn sst2(texts: &[&str]) -> Dataset {
        Dataset {
            spec: preset("sst2").unwrap(),
            samples: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Sample {
                    id: format!("s{i}"),
                    fields: [("sentence".to_string(), t.to_string())]
                        .into_iter()
                        .collect::<FieldMap>(),
                    label: "positive".into(),
                    benchmark: "sst2".into(),
                    split: None,
                })
                .collect(),
        }
    }

    #[test]
    fn calibrates_with_mock_rules() {
        let ds = sst2(&[
            "The movie is great.",
            "A very good story.",
            "A very funny movie.",
        ]);
        let provider = MockProvider::with_rules(MockRules::default());
        let run =
            calibrate_dataset(&ds, &PipelineConfig::default(), &provider, &LexicalScorer).unwrap();
        assert_eq!(run.dataset.len(), 3);
        for (m, (a, b)) in run
            .meta
            .iter()
            .zip(ds.samples.iter().zip(&run.dataset.samples))
        {
            assert_eq!(a.id, b.id);
            assert_eq!(m.candidate_count, 16);
            assert_eq!(m.original_count, 1);
            assert!(m.kept_count >= 1);
            if !m.selected_original {
                assert_ne!(a.fields, b.fields);
            }
        }
        assert!(run.meta.iter().any(|m| !m.selected_original));
    }

    #[test]
    fn degenerate_config_is_identity() {
        let ds = sst2(&["The movie is great.", "Plain."]);
        let cfg = PipelineConfig {
            rewrite: RewriteConfig {
                levels: vec![],
                pivots: vec![],
                ..RewriteConfig::default()
            },
            ..PipelineConfig::default()
        };
        let provider = MockProvider::default();
        let run = calibrate_dataset(&ds, &cfg, &provider, &LexicalScorer).unwrap();
        assert_eq!(run.dataset, ds);
        assert_eq!(provider.calls(), 0);
    }

    #[test]
    fn failures_abort_or_keep_original() {
        let ds = sst2(&["The movie is great.", "Something else."]);
        // empty table: every rewrite request fails
        let provider = MockProvider::default();
        let err = calibrate_dataset(&ds, &PipelineConfig::default(), &provider, &LexicalScorer)
            .unwrap_err();
        assert_eq!(err.sample_id(), "s0");

        let cfg = PipelineConfig {
            skip_errors: true,
            ..PipelineConfig::default()
        };
        let run = calibrate_dataset(&ds, &cfg, &provider, &LexicalScorer).unwrap();
        assert_eq!(run.dataset, ds);
        assert_eq!(run.failures(), 2);
        assert_eq!(run.meta[0].scores.rouge1, 100.0);
    }

    #[test]
    fn source_language_pivot_is_dropped() {
        let spec = preset("ceval").unwrap();
        let cfg = effective_rewrite(&RewriteConfig::default(), &spec);
        assert_eq!(cfg.pivots, vec!["de".to_string(), "fr".to_string()]);
    }
}
