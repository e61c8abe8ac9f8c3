use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{GenerationRequest, Provider, ProviderError, RequestTag};
use crate::evalharness::IclPrompt;
use crate::prompts::PromptTemplates;
use crate::rewrite::ParaphraseLevel;
use crate::score;

/// Offline provider: exact-prompt lookup table first, then optional
/// rule-based behaviour keyed on the shipped prompt templates.
///
/// The rules stand in for an LLM well enough to drive the whole pipeline:
/// paraphrases substitute synonyms, translations tag the text with the target
/// language and drift vocabulary on the way back, the equivalence judge
/// compares token overlap and negations, and evaluation answers like a
/// contaminated model that recalls labels of verbatim-seen inputs and guesses
/// otherwise.
#[derive(Debug, Default)]
pub struct MockProvider {
    table: HashMap<String, String>,
    rules: Option<MockRules>,
    calls: AtomicU64,
}

#[derive(Debug, Clone)]
pub struct MockRules {
    pub templates: PromptTemplates,
    /// Minimum unigram F1 in [0, 1] for the judge to answer "equivalent".
    pub equivalence_threshold: f64,
}

impl Default for MockRules {
    fn default() -> Self {
        MockRules {
            templates: PromptTemplates::default(),
            equivalence_threshold: 0.4,
        }
    }
}

impl MockProvider {
    pub fn from_table<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        MockProvider {
            table: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            rules: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_rules(rules: MockRules) -> Self {
        MockProvider {
            table: HashMap::new(),
            rules: Some(rules),
            calls: AtomicU64::new(0),
        }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: impl Into<String>) {
        self.table.insert(prompt.into(), response.into());
    }

    /// Number of `generate` calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        "mock-rules-v1"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(hit) = self.table.get(&req.prompt) {
            return Ok(hit.clone());
        }
        self.rules
            .as_ref()
            .and_then(|r| r.respond(req))
            .ok_or(ProviderError::EmptyCompletion)
    }
}

impl MockRules {
    fn respond(&self, req: &GenerationRequest) -> Option<String> {
        match req.tag {
            RequestTag::Paraphrase => ParaphraseLevel::ALL.iter().find_map(|&level| {
                let vars = self.templates.paraphrase(level).extract(&req.prompt)?;
                Some(paraphrase(vars.get("text")?, level))
            }),
            RequestTag::Backtranslate => {
                let vars = self.templates.translate().extract(&req.prompt)?;
                Some(translate(vars.get("text")?, vars.get("target")?))
            }
            RequestTag::Equivalence => {
                let vars = self.templates.equivalence().extract(&req.prompt)?;
                Some(self.judge(vars.get("original")?, vars.get("candidate")?))
            }
            RequestTag::Evaluate => IclPrompt::parse(&req.prompt).map(|p| answer(&p)),
        }
    }

    fn judge(&self, original: &str, candidate: &str) -> String {
        let negations = |t: &str| {
            score::tokenize(t)
                .iter()
                .filter(|w| {
                    matches!(
                        w.as_str(),
                        "not" | "no" | "never" | "nothing" | "none" | "t"
                    )
                })
                .count()
        };
        let overlap = score::rouge_n(candidate, original, 1) / 100.0;
        if negations(original) == negations(candidate) && overlap >= self.equivalence_threshold {
            "Yes, they are equivalent.".into()
        } else {
            "No, these sentences are not equivalent.".into()
        }
    }
}

const SYNONYMS: &[(&str, &str)] = &[
    ("movie", "film"),
    ("film", "movie"),
    ("great", "wonderful"),
    ("good", "fine"),
    ("bad", "poor"),
    ("terrible", "awful"),
    ("awful", "dreadful"),
    ("boring", "dull"),
    ("dull", "tedious"),
    ("funny", "amusing"),
    ("beautiful", "lovely"),
    ("big", "large"),
    ("large", "big"),
    ("small", "little"),
    ("little", "small"),
    ("quick", "fast"),
    ("fast", "rapid"),
    ("begin", "start"),
    ("start", "begin"),
    ("buy", "purchase"),
    ("bought", "purchased"),
    ("help", "assist"),
    ("show", "display"),
    ("story", "tale"),
    ("smart", "clever"),
    ("happy", "glad"),
    ("sad", "unhappy"),
    ("man", "guy"),
    ("woman", "lady"),
    ("child", "kid"),
    ("children", "kids"),
    ("house", "home"),
    ("car", "vehicle"),
    ("city", "town"),
    ("said", "stated"),
    ("says", "states"),
    ("think", "believe"),
    ("thinks", "believes"),
    ("enjoy", "like"),
    ("loved", "adored"),
    ("love", "adore"),
    ("hard", "difficult"),
    ("easy", "simple"),
    ("answer", "reply"),
    ("question", "query"),
    ("many", "numerous"),
    ("often", "frequently"),
    ("maybe", "perhaps"),
    ("also", "too"),
    ("completely", "entirely"),
    ("important", "significant"),
    ("whole", "entire"),
    ("about", "regarding"),
    ("get", "obtain"),
    ("gets", "obtains"),
    ("make", "create"),
    ("makes", "creates"),
    ("work", "job"),
    ("people", "folks"),
    ("performance", "acting"),
    ("cool", "stylish"),
];

const INTENSIFIERS: &[&str] = &["very", "really", "extremely", "quite", "truly", "highly"];

const DRIFT_GERMAN: &[(&str, &str)] = &[
    ("movie", "film"),
    ("very", "really"),
    ("great", "grand"),
    ("the", "the"),
    ("is", "is"),
    ("bought", "acquired"),
    ("people", "persons"),
    ("about", "over"),
    ("funny", "comical"),
    ("boring", "tiresome"),
];
const DRIFT_CHINESE: &[(&str, &str)] = &[
    ("movie", "motion picture"),
    ("very", "extremely"),
    ("great", "excellent"),
    ("good", "nice"),
    ("bad", "not good"),
    ("people", "persons"),
    ("story", "narrative"),
    ("funny", "humorous"),
];
const DRIFT_FRENCH: &[(&str, &str)] = &[
    ("movie", "cinema piece"),
    ("very", "most"),
    ("great", "magnificent"),
    ("good", "decent"),
    ("story", "history"),
    ("people", "individuals"),
    ("boring", "annoying"),
];

fn lookup<'a>(table: &'a [(&str, &str)], word: &str) -> Option<&'a str> {
    table.iter().find(|(k, _)| *k == word).map(|(_, v)| *v)
}

/// Applies `f` to every alphanumeric run, keeping separators. `f` returns the
/// replacement, or `None` to keep the word. An empty replacement deletes the
/// word together with one following space.
fn map_words(text: &str, mut f: impl FnMut(&str) -> Option<String>) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut changed = 0;
    let mut word = String::new();
    let mut skip_space = false;
    let mut flush = |word: &mut String, out: &mut String, skip: &mut bool| {
        if word.is_empty() {
            return;
        }
        let lower = word.to_lowercase();
        match f(&lower) {
            Some(rep) if rep != lower => {
                changed += 1;
                if rep.is_empty() {
                    *skip = true;
                } else {
                    out.push_str(&match_case(word, &rep));
                }
            }
            _ => out.push_str(word),
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out, &mut skip_space);
            if skip_space && c == ' ' {
                skip_space = false;
                continue;
            }
            skip_space = false;
            out.push(c);
        }
    }
    flush(&mut word, &mut out, &mut skip_space);
    (out, changed)
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    match chars.next() {
        Some(first) if first.is_uppercase() => {
            let mut r = replacement.chars();
            r.next()
                .map(|c| c.to_uppercase().collect::<String>() + r.as_str())
                .unwrap_or_default()
        }
        _ => replacement.to_string(),
    }
}

fn lowercase_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn paraphrase(text: &str, level: ParaphraseLevel) -> String {
    let text = text.trim();
    match level {
        ParaphraseLevel::Simplify => {
            let (out, n) = map_words(text, |w| {
                if INTENSIFIERS.contains(&w) {
                    Some(String::new())
                } else {
                    lookup(SYNONYMS, w).map(str::to_string)
                }
            });
            if n == 0 {
                format!("Simply put, {}", lowercase_first(text))
            } else {
                out
            }
        }
        ParaphraseLevel::Complexify => {
            let (out, _) = map_words(text, |w| lookup(SYNONYMS, w).map(str::to_string));
            format!("It is worth noting that {}", lowercase_first(&out))
        }
        ParaphraseLevel::SameLevel => {
            let (out, n) = map_words(text, |w| lookup(SYNONYMS, w).map(str::to_string));
            if n == 0 {
                format!("Put differently, {}", lowercase_first(text))
            } else {
                out
            }
        }
    }
}

fn translate(text: &str, target: &str) -> String {
    let text = text.trim();
    if target != "English" {
        return format!("[{target}] {text}");
    }
    let (lang, body) = match text.strip_prefix('[').and_then(|t| t.split_once("] ")) {
        Some((lang, body)) => (lang, body),
        None => ("", text),
    };
    let table = match lang {
        "Chinese" => DRIFT_CHINESE,
        "French" => DRIFT_FRENCH,
        _ => DRIFT_GERMAN,
    };
    map_words(body, |w| lookup(table, w).map(str::to_string)).0
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Label options announced by an instruction ending in "Just return ...".
fn announced_labels(instruction: &str) -> Vec<String> {
    let Some(at) = instruction.find("Just return ") else {
        return Vec::new();
    };
    let tail = &instruction[at + "Just return ".len()..];
    let tail = tail.strip_prefix("one answer with ").unwrap_or(tail);
    let tail = tail.trim_end().trim_end_matches('.');
    tail.replace(", or ", ", ")
        .replace(" or ", ", ")
        .split(", ")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && !s.contains(' '))
        .collect()
}

fn answer(prompt: &IclPrompt) -> String {
    if let Some((_, label)) = prompt.shots.iter().find(|(text, _)| *text == prompt.query) {
        return label.clone();
    }
    let h = fnv1a(&prompt.query);
    let labels = announced_labels(&prompt.instruction);
    if !labels.is_empty() {
        return labels[(h % labels.len() as u64) as usize].clone();
    }
    if prompt.instruction.contains("number") {
        return format!("The answer is {}.", h % 100);
    }
    // lead-1 summary of the query fields
    let body: String = prompt
        .query
        .lines()
        .map(|l| l.split_once(": ").map_or(l, |(_, v)| v))
        .collect::<Vec<_>>()
        .join(" ");
    crate::corpus::truncate_to_sentences(&body, 1)
}
