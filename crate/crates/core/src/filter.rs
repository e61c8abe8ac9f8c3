//! Equivalence filtering of rewrite candidates.
//!
//! Each rewritten field is judged against the original field by an LLM
//! prompted with the equivalence instruction. A candidate survives only if
//! every field passes. The original candidate always survives, so the output
//! is never empty and falls back to the verbatim original when every rewrite
//! fails.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FieldMap;
use crate::par::{self, ExecMode};
use crate::prompts::PromptTemplates;
use crate::provider::{GenerationRequest, Provider, ProviderError, RequestTag};
use crate::rewrite::Candidate;
use crate::score::tokenize;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("equivalence check needs two non-empty texts")]
    EmptyText,
    #[error("candidate set has no original candidate")]
    MissingOriginal,
    #[error("candidate {index} lacks field `{field}`")]
    MissingField { index: usize, field: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    /// Texts are byte-identical; no provider call was made.
    Identical,
    Affirmative,
    Negative,
    /// Response matched neither pattern; counted as not equivalent.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub candidate_index: usize,
    pub equivalent: bool,
    pub kind: VerdictKind,
    pub raw_response: String,
}

/// Parsing rule for judge responses: equivalent iff the lowercased response
/// mentions "yes" or "equivalent" and carries no negative marker ("no" as a
/// word, or a negated "equivalent").
pub fn parse_verdict(response: &str) -> VerdictKind {
    let lower = response.to_lowercase();
    let words = tokenize(&lower);
    let negative = words.iter().any(|w| w == "no")
        || [
            "not equivalent",
            "n't equivalent",
            "non-equivalent",
            "nonequivalent",
            "inequivalent",
        ]
        .iter()
        .any(|m| lower.contains(m));
    let affirmative = words.iter().any(|w| w == "yes") || lower.contains("equivalent");
    match (affirmative, negative) {
        (_, true) => VerdictKind::Negative,
        (true, false) => VerdictKind::Affirmative,
        (false, false) => VerdictKind::Unparseable,
    }
}

pub fn check_equivalence<P: Provider + ?Sized>(
    original: &str,
    candidate: &str,
    provider: &P,
    templates: &PromptTemplates,
) -> Result<EquivalenceVerdict, FilterError> {
    if original.trim().is_empty() || candidate.trim().is_empty() {
        return Err(FilterError::EmptyText);
    }
    if original == candidate {
        return Ok(EquivalenceVerdict {
            candidate_index: 0,
            equivalent: true,
            kind: VerdictKind::Identical,
            raw_response: String::new(),
        });
    }
    let prompt = templates
        .equivalence()
        .render(&[("original", original), ("candidate", candidate)]);
    let raw = provider.generate(&GenerationRequest::new(prompt, RequestTag::Equivalence))?;
    let kind = parse_verdict(&raw);
    if kind == VerdictKind::Unparseable {
        log::debug!("unparseable equivalence verdict: {raw:?}");
    }
    Ok(EquivalenceVerdict {
        candidate_index: 0,
        equivalent: kind == VerdictKind::Affirmative,
        kind,
        raw_response: raw,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Candidate>,
    /// Per input candidate, the verdicts collected before the first failing
    /// field (empty for the original and when the detector is disabled).
    pub verdicts: Vec<Vec<EquivalenceVerdict>>,
    /// True when every rewritten candidate was rejected.
    pub fell_back: bool,
}

pub fn filter_candidates_detailed<P: Provider + ?Sized>(
    original_texts: &FieldMap,
    candidates: &[Candidate],
    provider: &P,
    enabled: bool,
    templates: &PromptTemplates,
    mode: ExecMode,
) -> Result<FilterOutcome, FilterError> {
    if !candidates.iter().any(|c| c.is_original) {
        return Err(FilterError::MissingOriginal);
    }
    if !enabled {
        return Ok(FilterOutcome {
            kept: candidates.to_vec(),
            verdicts: vec![Vec::new(); candidates.len()],
            fell_back: false,
        });
    }
    let judged = par::map_indexed(mode, candidates, |index, cand| -> Result<_, FilterError> {
        if cand.is_original {
            return Ok((true, Vec::new()));
        }
        let mut verdicts = Vec::with_capacity(original_texts.len());
        for (field, original) in original_texts {
            let text = cand
                .texts
                .get(field)
                .ok_or_else(|| FilterError::MissingField {
                    index,
                    field: field.clone(),
                })?;
            let mut v = check_equivalence(original, text, provider, templates)?;
            v.candidate_index = index;
            let pass = v.equivalent;
            verdicts.push(v);
            if !pass {
                return Ok((false, verdicts));
            }
        }
        Ok((true, verdicts))
    });

    let mut kept = Vec::new();
    let mut verdicts = Vec::with_capacity(candidates.len());
    for (cand, result) in candidates.iter().zip(judged) {
        let (pass, v) = result?;
        if pass {
            kept.push(cand.clone());
        }
        verdicts.push(v);
    }
    let fell_back = candidates.iter().any(|c| !c.is_original) && kept.iter().all(|c| c.is_original);
    Ok(FilterOutcome {
        kept,
        verdicts,
        fell_back,
    })
}

/// Candidates whose every field is judged equivalent to the original. With
/// the detector disabled the input is returned unchanged.
pub fn filter_candidates<P: Provider + ?Sized>(
    original_texts: &FieldMap,
    candidates: &[Candidate],
    provider: &P,
    enabled: bool,
    templates: &PromptTemplates,
) -> Result<Vec<Candidate>, FilterError> {
    filter_candidates_detailed(
        original_texts,
        candidates,
        provider,
        enabled,
        templates,
        ExecMode::default(),
    )
    .map(|o| o.kept)
}
