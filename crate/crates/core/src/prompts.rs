//! Prompt templates with `{name}` placeholders.
//!
//! Templates can be rendered from variables and, for the mock provider,
//! matched back against a rendered prompt to recover those variables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::rewrite::ParaphraseLevel;

/// Instruction for the equivalence judge.
pub const EQUIVALENCE_INSTRUCTION: &str =
    "Please determine whether the following sentences are equivalent.";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(String),
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after.find('}');
            let name = close.map(|c| &after[..c]);
            match name {
                Some(n) if is_identifier(n) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Var(n.to_string()));
                    rest = &after[n.len() + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Template {
            source: source.to_string(),
            segments,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Var(v) => Some(v.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Substitutes every placeholder; unknown names render as empty strings.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.source.len() + 64);
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Var(v) => {
                    if let Some((_, val)) = vars.iter().find(|(k, _)| k == v) {
                        out.push_str(val);
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`render`](Self::render): returns the variable bindings if
    /// `prompt` has this template's shape. A variable followed by a literal
    /// binds up to the first occurrence of that literal.
    pub fn extract(&self, prompt: &str) -> Option<HashMap<String, String>> {
        let mut vars = HashMap::new();
        let mut rest = prompt;
        let mut pending: Option<&str> = None;
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => match pending.take() {
                    Some(var) => {
                        let at = rest.find(l.as_str())?;
                        vars.insert(var.to_string(), rest[..at].to_string());
                        rest = &rest[at + l.len()..];
                    }
                    None => rest = rest.strip_prefix(l.as_str())?,
                },
                Segment::Var(v) => {
                    if pending.is_some() {
                        // adjacent placeholders are ambiguous
                        return None;
                    }
                    pending = Some(v);
                }
            }
        }
        match pending {
            Some(var) => {
                vars.insert(var.to_string(), rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(vars)
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Prompt texts used by the rewrite and filter stages. Every field can be
/// overridden from the run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub paraphrase_simplify: String,
    pub paraphrase_complexify: String,
    pub paraphrase_same_level: String,
    /// Placeholders: `source`, `target` (language names) and `text`.
    pub translate: String,
    /// Placeholders: `original`, `candidate`.
    pub equivalence: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            paraphrase_simplify: "Paraphrase the following text, making it simpler, preserving the meaning exactly:\n\n{text}".into(),
            paraphrase_complexify: "Paraphrase the following text, making it more complex, preserving the meaning exactly:\n\n{text}".into(),
            paraphrase_same_level: "Paraphrase the following text, keeping the same complexity, preserving the meaning exactly:\n\n{text}".into(),
            translate: "Translate the following text from {source} to {target}. Return only the translation.\n\n{text}".into(),
            equivalence: format!("{EQUIVALENCE_INSTRUCTION}\n\nSentence 1: {{original}}\nSentence 2: {{candidate}}\n\nAnswer:"),
        }
    }
}

impl PromptTemplates {
    pub fn paraphrase(&self, level: ParaphraseLevel) -> Template {
        Template::parse(match level {
            ParaphraseLevel::Simplify => &self.paraphrase_simplify,
            ParaphraseLevel::Complexify => &self.paraphrase_complexify,
            ParaphraseLevel::SameLevel => &self.paraphrase_same_level,
        })
    }

    pub fn translate(&self) -> Template {
        Template::parse(&self.translate)
    }

    pub fn equivalence(&self) -> Template {
        Template::parse(&self.equivalence)
    }
}

/// English display name for a language code; unknown codes pass through.
pub fn language_name(code: &str) -> &str {
    match code {
        "en" => "English",
        "de" => "German",
        "zh" => "Chinese",
        "fr" => "French",
        "es" => "Spanish",
        "ja" => "Japanese",
        "ru" => "Russian",
        "it" => "Italian",
        "pt" => "Portuguese",
        "ko" => "Korean",
        "ar" => "Arabic",
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_extract_round_trip() {
        let t = PromptTemplates::default().equivalence();
        let p = t.render(&[("original", "a cat"), ("candidate", "one cat")]);
        assert!(p.starts_with(EQUIVALENCE_INSTRUCTION));
        let vars = t.extract(&p).unwrap();
        assert_eq!(vars["original"], "a cat");
        assert_eq!(vars["candidate"], "one cat");
    }

    #[test]
    fn extract_rejects_other_templates() {
        let d = PromptTemplates::default();
        let p = d
            .paraphrase(ParaphraseLevel::Simplify)
            .render(&[("text", "hi")]);
        assert!(d
            .paraphrase(ParaphraseLevel::Complexify)
            .extract(&p)
            .is_none());
        assert!(d.translate().extract(&p).is_none());
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = Template::parse(r#"choose the {sample["question"]} one: {text}"#);
        assert_eq!(t.variables().collect::<Vec<_>>(), vec!["text"]);
        assert_eq!(
            t.render(&[("text", "x")]),
            r#"choose the {sample["question"]} one: x"#
        );
    }
}
