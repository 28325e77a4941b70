//! Prompt templates with strict placeholder checking. The four extraction
//! phase templates ship as editable data files; the summarisation template
//! follows the instruction/input/response layout exactly and is the one the
//! summariser renders for every generation call.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} is not filled")]
    MissingVar(String),
    #[error("variable {0:?} does not match any placeholder")]
    ExcessVar(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("template file {0}: {1}")]
    File(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    AspectId,
    Sentiment,
    Verbatim,
    Translate,
    Summarise,
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateName::AspectId => "aspect_id",
            TemplateName::Sentiment => "sentiment",
            TemplateName::Verbatim => "verbatim",
            TemplateName::Translate => "translate",
            TemplateName::Summarise => "summarise",
        };
        f.write_str(s)
    }
}

/// Template text with `{placeholder}` slots. Rendering demands exactly the
/// placeholder set: nothing missing, nothing extra.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: TemplateName,
    text: String,
    placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        let placeholders = scan_placeholders(&text)?;
        Ok(PromptTemplate {
            name,
            text,
            placeholders,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitute all placeholders. Deterministic; the context variable sits
    /// wherever the template put it (the shipped phase templates keep it
    /// last, matching the prompt-then-context concatenation).
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        for key in vars.keys() {
            if !self.placeholders.contains(key) {
                return Err(TemplateError::ExcessVar(key.clone()));
            }
        }
        for slot in &self.placeholders {
            if !vars.contains_key(slot) {
                return Err(TemplateError::MissingVar(slot.clone()));
            }
        }
        let mut out = self.text.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        Ok(out)
    }
}

fn scan_placeholders(text: &str) -> Result<BTreeSet<String>, TemplateError> {
    let mut found = BTreeSet::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &text[i + 1..];
            match rest.find('}') {
                Some(end) => {
                    let name = &rest[..end];
                    if name.is_empty()
                        || !name
                            .chars()
                            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
                    {
                        return Err(TemplateError::Unterminated(i));
                    }
                    found.insert(name.to_string());
                    i += 1 + end + 1;
                }
                None => return Err(TemplateError::Unterminated(i)),
            }
        } else {
            i += 1;
        }
    }
    Ok(found)
}

/// The five templates the pipeline uses.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub aspect_id: PromptTemplate,
    pub sentiment: PromptTemplate,
    pub verbatim: PromptTemplate,
    pub translate: PromptTemplate,
    pub summarise: PromptTemplate,
}

impl TemplateSet {
    /// Templates compiled into the binary from `data/templates/`.
    pub fn builtin() -> Self {
        TemplateSet {
            aspect_id: PromptTemplate::new(
                TemplateName::AspectId,
                include_str!("../../data/templates/aspect_id.txt"),
            )
            .expect("builtin aspect_id template"),
            sentiment: PromptTemplate::new(
                TemplateName::Sentiment,
                include_str!("../../data/templates/sentiment.txt"),
            )
            .expect("builtin sentiment template"),
            verbatim: PromptTemplate::new(
                TemplateName::Verbatim,
                include_str!("../../data/templates/verbatim.txt"),
            )
            .expect("builtin verbatim template"),
            translate: PromptTemplate::new(
                TemplateName::Translate,
                include_str!("../../data/templates/translate.txt"),
            )
            .expect("builtin translate template"),
            summarise: PromptTemplate::new(
                TemplateName::Summarise,
                include_str!("../../data/templates/summarise.txt"),
            )
            .expect("builtin summarise template"),
        }
    }

    /// Load editable templates from a directory holding `aspect_id.txt`,
    /// `sentiment.txt`, `verbatim.txt`, `translate.txt` and `summarise.txt`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let load = |name: TemplateName, file: &str| -> Result<PromptTemplate, TemplateError> {
            let path = dir.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| TemplateError::File(path.display().to_string(), e.to_string()))?;
            PromptTemplate::new(name, text)
        };
        Ok(TemplateSet {
            aspect_id: load(TemplateName::AspectId, "aspect_id.txt")?,
            sentiment: load(TemplateName::Sentiment, "sentiment.txt")?,
            verbatim: load(TemplateName::Verbatim, "verbatim.txt")?,
            translate: load(TemplateName::Translate, "translate.txt")?,
            summarise: load(TemplateName::Summarise, "summarise.txt")?,
        })
    }
}

/// Marker line prefixes the mock backend keys on to detect the phase.
pub(crate) mod markers {
    pub const ASPECT_ID: &str = "Task: aspect-identification";
    pub const SENTIMENT: &str = "Task: sentiment-classification";
    pub const VERBATIM: &str = "Task: verbatim-extraction";
    pub const TRANSLATE: &str = "Task: verbatim-translation";
    pub const SUMMARISE: &str = "### Instruction: Generate a fluent descriptive within";
}

/// Separator used to pack a verbatim list into the translate template's
/// single `{verbatims}` slot.
pub const VERBATIM_SEPARATOR: &str = " ;; ";
