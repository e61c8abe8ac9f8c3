//! Uniform sample schema, benchmark presets, dataset loading and the
//! per-benchmark calibration policy (which fields get rewritten, truncation).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Record keys that are never treated as sample fields.
pub const RESERVED_KEYS: [&str; 3] = ["id", "label", "split"];

pub type FieldMap = IndexMap<String, String>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("sample `{id}`: calibration field `{field}` is absent")]
    FieldAbsent { id: String, field: String },
    #[error("invalid benchmark definition `{name}`: {message}")]
    InvalidSpec { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    MultipleChoice,
    Math,
    Generation,
}

impl TaskKind {
    /// Tasks scored by exact match of a label.
    pub fn is_labelled(self) -> bool {
        !matches!(self, TaskKind::Generation)
    }
}

/// Per-benchmark task description and calibration policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub task_kind: TaskKind,
    /// Task instruction. `{sample["field"]}` is replaced by that field of the
    /// sample being rendered.
    pub instruction: String,
    pub calib_fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_sentences: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_set: Option<Vec<String>>,
    /// Normalized prediction -> normalized label aliases.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_synonyms: BTreeMap<String, String>,
    /// Source language code of the benchmark text.
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "en".to_string()
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: &str| {
            Err(CorpusError::InvalidSpec {
                name: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.name.is_empty() {
            return fail("name is empty");
        }
        if self.calib_fields.is_empty() {
            return fail("calib_fields is empty");
        }
        if let Some(f) = self
            .calib_fields
            .iter()
            .find(|f| RESERVED_KEYS.contains(&f.as_str()))
        {
            return fail(&format!("calib field `{f}` is a reserved record key"));
        }
        if self.truncate_sentences == Some(0) {
            return fail("truncate_sentences must be >= 1");
        }
        let wants_labels = matches!(
            self.task_kind,
            TaskKind::Classification | TaskKind::MultipleChoice
        );
        match (&self.label_set, wants_labels) {
            (None, true) => {
                fail("label_set is required for classification and multiple-choice tasks")
            }
            (Some(_), false) => {
                fail("label_set is only allowed for classification and multiple-choice tasks")
            }
            (Some(set), true) if set.is_empty() => fail("label_set is empty"),
            _ => Ok(()),
        }
    }

    /// Instruction with `{sample["field"]}` references filled from `sample`.
    pub fn render_instruction(&self, sample: &Sample) -> String {
        let mut out = String::with_capacity(self.instruction.len());
        let mut rest = self.instruction.as_str();
        const OPEN: &str = "{sample[\"";
        const CLOSE: &str = "\"]}";
        while let Some(start) = rest.find(OPEN) {
            let after = &rest[start + OPEN.len()..];
            match after.find(CLOSE) {
                Some(end) => {
                    out.push_str(&rest[..start]);
                    let field = &after[..end];
                    out.push_str(sample.fields.get(field).map(String::as_str).unwrap_or(""));
                    rest = &after[end + CLOSE.len()..];
                }
                None => break,
            }
        }
        out.push_str(rest);
        out
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub fields: FieldMap,
    pub label: String,
    pub benchmark: String,
    /// Origin split (`train`, `validation`, `test`) when the record states it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl Sample {
    /// Flat record in the dataset file format.
    pub fn to_record(&self) -> Map<String, Value> {
        let mut rec = Map::new();
        rec.insert("id".into(), Value::String(self.id.clone()));
        for (k, v) in &self.fields {
            rec.insert(k.clone(), Value::String(v.clone()));
        }
        rec.insert("label".into(), Value::String(self.label.clone()));
        if let Some(split) = &self.split {
            rec.insert("split".into(), Value::String(split.clone()));
        }
        rec
    }

    /// `name: value` lines in field order.
    pub fn render_fields(&self) -> String {
        self.fields
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: BenchmarkSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Marks every sample without an explicit split as coming from `split`.
    pub fn mark_split(&mut self, split: &str) {
        for s in self.samples.iter_mut().filter(|s| s.split.is_none()) {
            s.split = Some(split.to_string());
        }
    }
}

pub fn load_dataset(path: &Path, spec: &BenchmarkSpec) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(file, spec).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses line-delimited JSON records. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn parse_dataset<R: Read>(reader: R, spec: &BenchmarkSpec) -> Result<Dataset, CorpusError> {
    spec.validate()?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(&line, line_no, idx, spec)?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_record(
    line: &str,
    line_no: usize,
    index: usize,
    spec: &BenchmarkSpec,
) -> Result<Sample, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed {
        line: line_no,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(malformed("record is not a JSON object".into()));
    };

    let mut id = None;
    let mut label = None;
    let mut split = None;
    let mut fields = FieldMap::new();
    for (key, value) in map {
        let text = scalar_text(&value).ok_or_else(|| {
            malformed(format!("field `{key}` must be a string, number or boolean"))
        })?;
        match key.as_str() {
            "id" => id = Some(text),
            "label" => label = Some(text),
            "split" => split = Some(text),
            _ => {
                fields.insert(key, text);
            }
        }
    }

    if let Some(missing) = spec.calib_fields.iter().find(|f| !fields.contains_key(*f)) {
        return Err(CorpusError::MissingField {
            line: line_no,
            field: missing.clone(),
        });
    }
    let label = match label {
        Some(l) if !(l.trim().is_empty() && spec.task_kind.is_labelled()) => l,
        Some(_) | None if spec.task_kind.is_labelled() => {
            return Err(CorpusError::MissingField {
                line: line_no,
                field: "label".into(),
            })
        }
        _ => String::new(),
    };

    Ok(Sample {
        id: id.unwrap_or_else(|| index.to_string()),
        fields,
        label,
        benchmark: spec.name.clone(),
        split,
    })
}

/// Writes samples in the dataset file format, one record per line.
pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        let line = serde_json::to_string(&s.to_record()).expect("record serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// First `n` sentences of `text`, joined by single spaces.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace or the end of
/// the text. Abbreviations such as "Mr." are not special-cased.
pub fn truncate_to_sentences(text: &str, n: usize) -> String {
    assert!(n >= 1, "sentence count must be at least 1");
    let mut sentences: Vec<&str> = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                sentences.push(s);
                if sentences.len() == n {
                    return sentences.join(" ");
                }
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences.truncate(n);
    sentences.join(" ")
}

/// The fields of `sample` that the benchmark policy rewrites, in policy order,
/// truncated when the policy says so.
pub fn select_calibration_text(
    sample: &Sample,
    spec: &BenchmarkSpec,
) -> Result<FieldMap, CorpusError> {
    spec.calib_fields
        .iter()
        .map(|field| {
            let text = sample
                .fields
                .get(field)
                .ok_or_else(|| CorpusError::FieldAbsent {
                    id: sample.id.clone(),
                    field: field.clone(),
                })?;
            let text = match spec.truncate_sentences {
                Some(n) => truncate_to_sentences(text, n),
                None => text.clone(),
            };
            Ok((field.clone(), text))
        })
        .collect()
}

fn spec(
    name: &str,
    task_kind: TaskKind,
    instruction: &str,
    calib_fields: &[&str],
    label_set: Option<&[&str]>,
) -> BenchmarkSpec {
    BenchmarkSpec {
        name: name.to_string(),
        task_kind,
        instruction: instruction.to_string(),
        calib_fields: calib_fields.iter().map(|s| s.to_string()).collect(),
        truncate_sentences: (task_kind == TaskKind::Generation).then_some(3),
        label_set: label_set.map(|l| l.iter().map(|s| s.to_string()).collect()),
        label_synonyms: BTreeMap::new(),
        language: default_language(),
    }
}

const ENTAIL2: &[&str] = &["entailment", "not_entailment"];
const ENTAIL3: &[&str] = &["entailment", "contradiction", "neutral"];
const EQUIV: &[&str] = &["equivalent", "not_equivalent"];
const SENTIMENT: &[&str] = &["positive", "negative"];
const ABCD: &[&str] = &["A", "B", "C", "D"];

/// Built-in benchmark specs. Instructions are the per-dataset task prompts
/// used for in-context evaluation; field names follow the usual public
/// releases of each dataset.
pub fn presets() -> Vec<BenchmarkSpec> {
    use TaskKind::*;
    let mut out = vec![
        spec("rte", Classification,
            "The task is to determine whether a pair of sentences are entailed by each other. Just return entailment or not_entailment.",
            &["sentence1", "sentence2"], Some(ENTAIL2)),
        spec("qqp", Classification,
            "The task is to determine whether a pair of questions are semantically equivalent. Just return equivalent or not_equivalent.",
            &["question1", "question2"], Some(EQUIV)),
        spec("mrpc", Classification,
            "The task is to determine whether a pair of questions are semantically equivalent. Just return equivalent or not_equivalent.",
            &["sentence1", "sentence2"], Some(EQUIV)),
        spec("qnli", Classification,
            "The task is to determine whether the context sentence contains the answer to the question. Just return entailment or not_entailment.",
            &["question", "sentence"], Some(ENTAIL2)),
        spec("mnli", Classification,
            "The task is to predict whether the premise entails the hypothesis, contradicts the hypothesis, or neither. Just return entailment, contradiction, or neutral.",
            &["premise", "hypothesis"], Some(ENTAIL3)),
        spec("cb", Classification,
            "The task is to predict whether the premise entails the hypothesis, contradicts the hypothesis, or neither. Just return entailment, contradiction, or neutral.",
            &["premise", "hypothesis"], Some(ENTAIL3)),
        spec("wnli", Classification,
            "The task is to predict if the sentence with the pronoun substituted is entailed by the original sentence. Just return entailment or not_entailment.",
            &["sentence1", "sentence2"], Some(ENTAIL2)),
        spec("snli", Classification,
            "The task is to determine whether a pair of sentences are entailed, contradicted or neutral each other. Just return entailment, contradiction, or neutral.",
            &["premise", "hypothesis"], Some(ENTAIL3)),
        spec("imdb", Classification,
            "The task is to determine whether the sentiment of the text is positive or negative. Just return positive or negative.",
            &["text"], Some(SENTIMENT)),
        spec("piqa", MultipleChoice,
            "The task is to select the best solution to the question. Just return solution1 or solution2.",
            &["goal"], Some(&["solution1", "solution2"])),
        spec("copa", MultipleChoice,
            "Given a premise, choose one of the following two choices that express the {sample[\"question\"]} relationship. Just return choice1 or choice2.",
            &["premise"], Some(&["choice1", "choice2"])),
        spec("boolq", Classification,
            "The task is to answer true or false given the question. Just return true or false.",
            &["question"], Some(&["true", "false"])),
        spec("sst2", Classification,
            "The task is to determine whether the sentiment of the sentence is positive or negative. Just return positive or negative.",
            &["sentence"], Some(SENTIMENT)),
        spec("ag_news", Classification,
            "The task is to classify the article into sports, world, business, or sci/tech. Just return sports, world, business, or sci/tech.",
            &["text"], Some(&["sports", "world", "business", "sci/tech"])),
        spec("gsm8k", Math,
            "The task is to answer a given mathematical question. Just directly return the final number answer.",
            &["question"], None),
        spec("multiarith", Math,
            "The task is to answer a given mathematical question. Just directly return the final number answer.",
            &["question"], None),
        spec("mmlu", MultipleChoice,
            "Please select the best answer from the options according to the question. Just return one answer with A, B, C, or D.",
            &["question"], Some(ABCD)),
        spec("ceval", MultipleChoice,
            "Please select the best answer from the options according to the question. Just return one answer with A, B, C, or D.",
            &["question"], Some(ABCD)),
        spec("cnn_dailymail", Generation, "Please summarize this article.", &["article"], None),
        spec("bbc_xsum", Generation, "Please summarize this article.", &["document"], None),
        spec("squad_v2", Generation,
            "Answer the question according to the context. If the context does not contain the answer, just return unanswerable.",
            &["question"], None),
    ];
    for s in &mut out {
        match s.name.as_str() {
            "ceval" => s.language = "zh".into(),
            // answers are short spans, not lengthy text
            "squad_v2" => s.truncate_sentences = None,
            _ => {}
        }
    }
    out
}

pub fn preset(name: &str) -> Option<BenchmarkSpec> {
    let wanted = name.to_ascii_lowercase().replace(['-', ' '], "_");
    presets().into_iter().find(|s| s.name == wanted)
}
