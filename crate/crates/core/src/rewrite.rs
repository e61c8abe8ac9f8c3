//! Candidate generation: paraphrase at three complexity levels, round-trip
//! translation through pivot languages, and their composition.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FieldMap;
use crate::prompts::{language_name, PromptTemplates};
use crate::provider::{GenerationRequest, Provider, ProviderError, RequestTag, DEFAULT_MAX_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraseLevel {
    Simplify,
    Complexify,
    SameLevel,
}

impl ParaphraseLevel {
    pub const ALL: [ParaphraseLevel; 3] = [Self::Simplify, Self::Complexify, Self::SameLevel];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simplify => "simplify",
            Self::Complexify => "complexify",
            Self::SameLevel => "same_level",
        }
    }
}

/// One rewrite applied to every calibrated field of a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RewriteStep {
    Paraphrase(ParaphraseLevel),
    /// Round trip through the given pivot language code.
    Backtranslate(String),
}

impl fmt::Display for RewriteStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewriteStep::Paraphrase(level) => write!(f, "para:{}", level.as_str()),
            RewriteStep::Backtranslate(pivot) => write!(f, "bt:{pivot}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CompositionOrder {
    /// Paraphrase first, then back-translate the paraphrase.
    #[default]
    #[serde(rename = "para-bt")]
    ParaThenBt,
    #[serde(rename = "bt-para")]
    BtThenPara,
}

impl CompositionOrder {
    pub fn label(self) -> &'static str {
        match self {
            Self::ParaThenBt => "Para + BT",
            Self::BtThenPara => "BT + Para",
        }
    }
}

impl std::str::FromStr for CompositionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "para-bt" => Ok(Self::ParaThenBt),
            "bt-para" => Ok(Self::BtThenPara),
            other => Err(format!(
                "unknown composition order `{other}` (expected para-bt or bt-para)"
            )),
        }
    }
}

/// A rewritten field set. The original is the candidate with no provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub texts: FieldMap,
    pub provenance: Vec<RewriteStep>,
    pub is_original: bool,
}

impl Candidate {
    pub fn original(src: &FieldMap) -> Self {
        Candidate {
            texts: src.clone(),
            provenance: Vec::new(),
            is_original: true,
        }
    }

    /// Compact provenance such as `para:simplify>bt:de`, or `original`.
    pub fn provenance_label(&self) -> String {
        if self.provenance.is_empty() {
            return "original".into();
        }
        self.provenance
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(">")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriteConfig {
    pub levels: Vec<ParaphraseLevel>,
    /// Pivot language codes.
    pub pivots: Vec<String>,
    /// Also emit one composed candidate per (level, pivot) pair.
    pub combine: bool,
    pub order: CompositionOrder,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompts: PromptTemplates,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            levels: ParaphraseLevel::ALL.to_vec(),
            pivots: vec!["de".into(), "zh".into(), "fr".into()],
            combine: true,
            order: CompositionOrder::ParaThenBt,
            temperature: RequestTag::Paraphrase.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
            prompts: PromptTemplates::default(),
        }
    }
}

impl RewriteConfig {
    /// Number of candidates [`generate_candidates`] returns, original included.
    pub fn candidate_count(&self) -> usize {
        let l = self.levels.len();
        let p = self.pivots.len();
        1 + l + p + if self.combine { l * p } else { 0 }
    }

    fn request(&self, prompt: String, tag: RequestTag) -> GenerationRequest {
        GenerationRequest::new(prompt, tag)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hop {
    Forward,
    Backward,
}

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("pivot language `{0}` equals the source language")]
    PivotIsSource(String),
    #[error("paraphrase ({level}) failed: {source}")]
    Paraphrase {
        level: &'static str,
        #[source]
        source: ProviderError,
    },
    #[error("back-translation via `{pivot}` failed on the {hop:?} hop: {source}")]
    Backtranslate {
        pivot: String,
        hop: Hop,
        #[source]
        source: ProviderError,
    },
}

/// Strips surrounding whitespace and one layer of matching quotes.
pub fn clean_completion(text: &str) -> String {
    let t = text.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')] {
        if let Some(inner) = t.strip_prefix(open).and_then(|s| s.strip_suffix(close)) {
            return inner.trim().to_string();
        }
    }
    t.to_string()
}

pub fn paraphrase<P: Provider + ?Sized>(
    text: &str,
    level: ParaphraseLevel,
    provider: &P,
    cfg: &RewriteConfig,
) -> Result<String, RewriteError> {
    if text.trim().is_empty() {
        return Err(RewriteError::EmptyInput);
    }
    let prompt = cfg.prompts.paraphrase(level).render(&[("text", text)]);
    let wrap = |source| RewriteError::Paraphrase {
        level: level.as_str(),
        source,
    };
    let out = clean_completion(
        &provider
            .generate(&cfg.request(prompt, RequestTag::Paraphrase))
            .map_err(wrap)?,
    );
    if out.is_empty() {
        return Err(wrap(ProviderError::EmptyCompletion));
    }
    Ok(out)
}

/// Translates `source_lang` → `pivot` → `source_lang` with two provider calls.
pub fn back_translate<P: Provider + ?Sized>(
    text: &str,
    source_lang: &str,
    pivot: &str,
    provider: &P,
    cfg: &RewriteConfig,
) -> Result<String, RewriteError> {
    if text.trim().is_empty() {
        return Err(RewriteError::EmptyInput);
    }
    if pivot.eq_ignore_ascii_case(source_lang) {
        return Err(RewriteError::PivotIsSource(pivot.to_string()));
    }
    let template = cfg.prompts.translate();
    let hop = |input: &str, from: &str, to: &str, which: Hop| {
        let prompt = template.render(&[
            ("source", language_name(from)),
            ("target", language_name(to)),
            ("text", input),
        ]);
        let err = |source| RewriteError::Backtranslate {
            pivot: pivot.to_string(),
            hop: which,
            source,
        };
        let out = clean_completion(
            &provider
                .generate(&cfg.request(prompt, RequestTag::Backtranslate))
                .map_err(err)?,
        );
        if out.is_empty() {
            return Err(err(ProviderError::EmptyCompletion));
        }
        Ok(out)
    };
    let there = hop(text, source_lang, pivot, Hop::Forward)?;
    hop(&there, pivot, source_lang, Hop::Backward)
}

fn apply_step<P: Provider + ?Sized>(
    texts: &FieldMap,
    step: &RewriteStep,
    source_lang: &str,
    provider: &P,
    cfg: &RewriteConfig,
) -> Result<FieldMap, RewriteError> {
    texts
        .iter()
        .map(|(field, text)| {
            let out = match step {
                RewriteStep::Paraphrase(level) => paraphrase(text, *level, provider, cfg)?,
                RewriteStep::Backtranslate(pivot) => {
                    back_translate(text, source_lang, pivot, provider, cfg)?
                }
            };
            Ok((field.clone(), out))
        })
        .collect()
}

fn derive<P: Provider + ?Sized>(
    base: &Candidate,
    step: RewriteStep,
    source_lang: &str,
    provider: &P,
    cfg: &RewriteConfig,
) -> Result<Candidate, RewriteError> {
    let texts = apply_step(&base.texts, &step, source_lang, provider, cfg)?;
    let mut provenance = base.provenance.clone();
    provenance.push(step);
    Ok(Candidate {
        texts,
        provenance,
        is_original: false,
    })
}

/// Builds the candidate set for one sample's calibration texts.
///
/// Order: the original, one candidate per paraphrase level, one per pivot,
/// then (when `cfg.combine`) one per (level, pivot) pair with levels as the
/// outer loop. Composed candidates reuse the single-step output they extend.
pub fn generate_candidates<P: Provider + ?Sized>(
    src: &FieldMap,
    source_lang: &str,
    cfg: &RewriteConfig,
    provider: &P,
) -> Result<Vec<Candidate>, RewriteError> {
    if src.values().any(|t| t.trim().is_empty()) {
        return Err(RewriteError::EmptyInput);
    }
    if let Some(p) = cfg
        .pivots
        .iter()
        .find(|p| p.eq_ignore_ascii_case(source_lang))
    {
        return Err(RewriteError::PivotIsSource(p.clone()));
    }
    let original = Candidate::original(src);
    let mut out = Vec::with_capacity(cfg.candidate_count());
    out.push(original.clone());

    let paraphrased = cfg
        .levels
        .iter()
        .map(|&l| {
            derive(
                &original,
                RewriteStep::Paraphrase(l),
                source_lang,
                provider,
                cfg,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let translated = cfg
        .pivots
        .iter()
        .map(|p| {
            derive(
                &original,
                RewriteStep::Backtranslate(p.clone()),
                source_lang,
                provider,
                cfg,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.extend(paraphrased.iter().cloned());
    out.extend(translated.iter().cloned());

    if cfg.combine {
        for (li, &level) in cfg.levels.iter().enumerate() {
            for (pi, pivot) in cfg.pivots.iter().enumerate() {
                let combined = match cfg.order {
                    CompositionOrder::ParaThenBt => derive(
                        &paraphrased[li],
                        RewriteStep::Backtranslate(pivot.clone()),
                        source_lang,
                        provider,
                        cfg,
                    )?,
                    CompositionOrder::BtThenPara => derive(
                        &translated[pi],
                        RewriteStep::Paraphrase(level),
                        source_lang,
                        provider,
                        cfg,
                    )?,
                };
                out.push(combined);
            }
        }
    }
    Ok(out)
}
