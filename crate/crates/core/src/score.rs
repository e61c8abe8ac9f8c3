//! Similarity kernels and candidate selection.
//!
//! ROUGE here is the F1 form over lowercase alphanumeric tokens, without
//! stemming or stopword removal, reported on a 0-100 scale. The learned-metric
//! score comes from a pluggable [`Scorer`]: a remote BLEURT service or a
//! lexical fallback.

use std::cmp::Ordering;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::FieldMap;
use crate::rewrite::Candidate;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer transport error: {0}")]
    Transport(String),
    #[error("scorer returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer produced a non-finite score")]
    NonFinite,
    #[error("cannot select from an empty candidate list")]
    EmptyCandidates,
    #[error("candidate is missing reference field `{0}`")]
    MissingField(String),
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn f1_percent(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    100.0 * 2.0 * p * r / (p + r)
}

fn sorted_ngrams<T: AsRef<str>>(tokens: &[T], n: usize) -> Vec<&[T]> {
    let mut grams: Vec<&[T]> = if tokens.len() >= n {
        tokens.windows(n).collect()
    } else {
        Vec::new()
    };
    grams.sort_unstable_by(|a, b| cmp_gram(a, b));
    grams
}

fn cmp_gram<T: AsRef<str>>(a: &[T], b: &[T]) -> Ordering {
    a.iter().map(AsRef::as_ref).cmp(b.iter().map(AsRef::as_ref))
}

/// ROUGE-N F1 over token sequences.
///
/// Clipped overlap is computed by merging the sorted n-gram lists, which sums
/// `min(count_cand(g), count_ref(g))` over shared n-grams `g`.
pub fn rouge_n_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = sorted_ngrams(candidate, n);
    let refs = sorted_ngrams(reference, n);
    let (mut i, mut j, mut overlap) = (0, 0, 0usize);
    while i < cand.len() && j < refs.len() {
        match cmp_gram(cand[i], refs[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    f1_percent(overlap, cand.len(), refs.len())
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_tokens<T: AsRef<str> + PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    f1_percent(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// ROUGE-1/2/L and the learned-metric score (×100).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleurt: f64,
}

impl SimilarityScores {
    /// ROUGE triple of `candidate` against `reference`; `bleurt` left at 0.
    pub fn rouge(candidate: &str, reference: &str) -> Self {
        let c = tokenize(candidate);
        let r = tokenize(reference);
        SimilarityScores {
            rouge1: rouge_n_tokens(&c, &r, 1),
            rouge2: rouge_n_tokens(&c, &r, 2),
            rouge_l: rouge_l_tokens(&c, &r),
            bleurt: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        in_range(self.rouge1)
            && in_range(self.rouge2)
            && in_range(self.rouge_l)
            && self.bleurt.is_finite()
    }

    /// Element-wise mean; zeros for an empty slice.
    pub fn mean(items: &[SimilarityScores]) -> Self {
        if items.is_empty() {
            return SimilarityScores::default();
        }
        let n = items.len() as f64;
        let sum = items
            .iter()
            .fold(SimilarityScores::default(), |acc, s| SimilarityScores {
                rouge1: acc.rouge1 + s.rouge1,
                rouge2: acc.rouge2 + s.rouge2,
                rouge_l: acc.rouge_l + s.rouge_l,
                bleurt: acc.bleurt + s.bleurt,
            });
        SimilarityScores {
            rouge1: sum.rouge1 / n,
            rouge2: sum.rouge2 / n,
            rouge_l: sum.rouge_l / n,
            bleurt: sum.bleurt / n,
        }
    }
}

/// Learned text-similarity metric.
pub trait Scorer: Send + Sync {
    /// Shown in reports next to the score so fallback numbers are never
    /// mistaken for BLEURT.
    fn label(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn label(&self) -> &str {
        (**self).label()
    }
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScoreError> {
        (**self).score(candidate, reference)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn label(&self) -> &str {
        (**self).label()
    }
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScoreError> {
        (**self).score(candidate, reference)
    }
}

/// Unigram F1 on a 0-1 scale. Used when no BLEURT service is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn label(&self) -> &str {
        "lexical-f1 (BLEURT fallback)"
    }

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(rouge_n(candidate, reference, 1) / 100.0)
    }
}

/// Client for the BLEURT scoring service: `POST /score` with
/// `{"candidate", "reference"}` answering `{"score"}`, and `GET /healthz`.
pub struct RemoteScorer {
    base: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        RemoteScorer {
            base: base_url.trim_end_matches('/').to_string(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }

    /// `Ok(true)` once the service answers 200, `Ok(false)` while it reports
    /// any other status.
    pub fn healthy(&self) -> Result<bool, ScoreError> {
        let resp = self
            .agent
            .get(&format!("{}/healthz", self.base))
            .call()
            .map_err(|e| ScoreError::Transport(e.to_string()))?;
        Ok(resp.status().as_u16() == 200)
    }
}

impl Scorer for RemoteScorer {
    fn label(&self) -> &str {
        "bleurt-20 (remote)"
    }

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScoreError> {
        let mut resp = self
            .agent
            .post(&format!("{}/score", self.base))
            .send_json(json!({ "candidate": candidate, "reference": reference }))
            .map_err(|e| ScoreError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ScoreError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ScoreError::Status { status, body });
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| ScoreError::Malformed(e.to_string()))?;
        let score = v
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ScoreError::Malformed(format!("no numeric `score` in {body}")))?;
        if !score.is_finite() {
            return Err(ScoreError::NonFinite);
        }
        Ok(score)
    }
}

/// Which candidate to keep, by its learned-metric score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    #[default]
    Lowest,
    Middle,
    Highest,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 3] = [Self::Lowest, Self::Middle, Self::Highest];

    /// Row label used in ablation tables.
    pub fn tier_label(self) -> &'static str {
        match self {
            Self::Lowest => "worst",
            Self::Middle => "middle",
            Self::Highest => "best",
        }
    }
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lowest" | "worst" => Ok(Self::Lowest),
            "middle" => Ok(Self::Middle),
            "highest" | "best" => Ok(Self::Highest),
            other => Err(format!("unknown selection policy `{other}`")),
        }
    }
}

/// Index picked by `policy` from `scores`: argmin, lower median by sorted
/// position, or argmax. Ties go to the earliest index.
pub fn select_index(scores: &[f64], policy: SelectionPolicy) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep list order
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Some(match policy {
        SelectionPolicy::Lowest => order[0],
        SelectionPolicy::Middle => order[(scores.len() - 1) / 2],
        SelectionPolicy::Highest => {
            let best = scores[order[scores.len() - 1]];
            // earliest among the maxima
            *order
                .iter()
                .find(|&&i| scores[i] == best)
                .expect("max present")
        }
    })
}

/// Mean learned-metric score of `texts` against `references` over the
/// reference fields.
pub fn candidate_score<S: Scorer + ?Sized>(
    texts: &FieldMap,
    references: &FieldMap,
    scorer: &S,
) -> Result<f64, ScoreError> {
    if references.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (field, reference) in references {
        let text = texts
            .get(field)
            .ok_or_else(|| ScoreError::MissingField(field.clone()))?;
        let s = scorer.score(text, reference)?;
        if !s.is_finite() {
            return Err(ScoreError::NonFinite);
        }
        sum += s;
    }
    Ok(sum / references.len() as f64)
}

/// Field-averaged ROUGE triple of `texts` against `references`, with the
/// learned-metric score filled in from `bleurt` (raw scale, reported ×100).
pub fn similarity(texts: &FieldMap, references: &FieldMap, bleurt: f64) -> SimilarityScores {
    let per_field: Vec<SimilarityScores> = references
        .iter()
        .map(|(field, reference)| {
            SimilarityScores::rouge(
                texts.get(field).map(String::as_str).unwrap_or(""),
                reference,
            )
        })
        .collect();
    SimilarityScores {
        bleurt: bleurt * 100.0,
        ..SimilarityScores::mean(&per_field)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Position of the chosen candidate in the input list.
    pub index: usize,
    pub candidate: Candidate,
    pub scores: SimilarityScores,
    /// Learned-metric score of every input candidate, in input order.
    pub all_scores: Vec<f64>,
}

pub fn select<S: Scorer + ?Sized>(
    candidates: &[Candidate],
    references: &FieldMap,
    policy: SelectionPolicy,
    scorer: &S,
) -> Result<Selection, ScoreError> {
    let all_scores = candidates
        .iter()
        .map(|c| candidate_score(&c.texts, references, scorer))
        .collect::<Result<Vec<_>, _>>()?;
    let index = select_index(&all_scores, policy).ok_or(ScoreError::EmptyCandidates)?;
    let candidate = candidates[index].clone();
    let scores = similarity(&candidate.texts, references, all_scores[index]);
    Ok(Selection {
        index,
        candidate,
        scores,
        all_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewrite::{ParaphraseLevel, RewriteStep};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_n("the cat sat", "the cat sat", 1), 100.0);
        assert!(close(rouge_n("the cat sat", "the dog sat", 1), 66.67, 0.01));
        assert_eq!(rouge_n("the cat sat", "the dog sat", 2), 0.0);
        assert_eq!(rouge_l("a b c d", "a b c d"), 100.0);
        assert!(close(rouge_l("a b c d", "a c b d"), 75.0, 1e-12));
        assert_eq!(rouge_l("x", "y"), 0.0);
        assert_eq!(rouge_n("", "the cat", 1), 0.0);
        assert_eq!(rouge_n("the", "the", 2), 0.0);
    }

    #[test]
    fn tokenization_lowercases_and_splits_on_punctuation() {
        assert_eq!(
            tokenize("It's  GREAT--really!"),
            vec!["it", "s", "great", "really"]
        );
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn lexical_fallback_bounds() {
        assert_eq!(
            LexicalScorer
                .score("same words here", "same words here")
                .unwrap(),
            1.0
        );
        assert_eq!(
            LexicalScorer.score("alpha beta", "gamma delta").unwrap(),
            0.0
        );
    }

    #[test]
    fn select_index_examples() {
        let s = [0.63, 0.40, 0.52];
        assert_eq!(select_index(&s, SelectionPolicy::Lowest), Some(1));
        assert_eq!(select_index(&s, SelectionPolicy::Middle), Some(2));
        assert_eq!(select_index(&s, SelectionPolicy::Highest), Some(0));
        for p in SelectionPolicy::ALL {
            assert_eq!(select_index(&[0.9], p), Some(0));
        }
        assert_eq!(select_index(&[], SelectionPolicy::Lowest), None);
        // ties resolve to the earliest position
        let t = [0.5, 0.2, 0.5, 0.2];
        assert_eq!(select_index(&t, SelectionPolicy::Lowest), Some(1));
        assert_eq!(select_index(&t, SelectionPolicy::Highest), Some(0));
        assert_eq!(select_index(&t, SelectionPolicy::Middle), Some(3));
    }

    struct Fixed(Vec<(&'static str, f64)>);

    impl Scorer for Fixed {
        fn label(&self) -> &str {
            "fixed"
        }
        fn score(&self, candidate: &str, _reference: &str) -> Result<f64, ScoreError> {
            Ok(self
                .0
                .iter()
                .find(|(t, _)| *t == candidate)
                .map_or(0.0, |(_, s)| *s))
        }
    }

    fn cand(text: &str, original: bool) -> Candidate {
        Candidate {
            texts: [("sentence".to_string(), text.to_string())]
                .into_iter()
                .collect(),
            provenance: if original {
                vec![]
            } else {
                vec![RewriteStep::Paraphrase(ParaphraseLevel::SameLevel)]
            },
            is_original: original,
        }
    }

    #[test]
    fn select_attaches_scores() {
        let refs: FieldMap = [("sentence".to_string(), "a b c".to_string())]
            .into_iter()
            .collect();
        let cands = vec![
            cand("a b c", true),
            cand("a b d", false),
            cand("x y z", false),
        ];
        let scorer = Fixed(vec![("a b c", 0.63), ("a b d", 0.40), ("x y z", 0.52)]);
        let low = select(&cands, &refs, SelectionPolicy::Lowest, &scorer).unwrap();
        assert_eq!(low.index, 1);
        assert!(close(low.scores.bleurt, 40.0, 1e-9));
        assert!(close(low.scores.rouge1, 200.0 / 3.0, 1e-9));
        let mid = select(&cands, &refs, SelectionPolicy::Middle, &scorer).unwrap();
        assert_eq!(mid.index, 2);
        assert!(matches!(
            select(&[], &refs, SelectionPolicy::Lowest, &scorer),
            Err(ScoreError::EmptyCandidates)
        ));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "worst".parse::<SelectionPolicy>().unwrap(),
            SelectionPolicy::Lowest
        );
        assert_eq!(
            "Highest".parse::<SelectionPolicy>().unwrap(),
            SelectionPolicy::Highest
        );
        assert!("median".parse::<SelectionPolicy>().is_err());
    }
}
