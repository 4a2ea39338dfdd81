use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::sha256_hex;

const BUILTIN_EN: &str = include_str!("../../templates/instructions.en.txt");
const BUILTIN_ZH: &str = include_str!("../../templates/instructions.zh.txt");

const REQUIRED: [&str; 8] = [
    "task",
    "directive.predict",
    "directive.answer",
    "directive.reasoning",
    "directive.normal",
    "reasoning_completion",
    "demand_generation",
    "judge",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "en",
            Language::Zh => "zh",
        })
    }
}

impl FromStr for Language {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            other => Err(TemplateError::UnknownLanguage(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template is missing section `{0}`")]
    MissingSection(&'static str),
    #[error("template defines section `{0}` twice")]
    DuplicateSection(String),
    #[error("section `task` must contain the `{{directive}}` slot exactly once")]
    DirectiveSlot,
    #[error("text before the first section header: `{0}`")]
    StrayText(String),
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("reading template: {0}")]
    Io(#[from] std::io::Error),
}

/// Named instruction texts loaded from a sectioned template file.
///
/// Sections start with `=== name ===`. The answer-task and reasoning-task
/// instructions share the `task` section and differ only in the text that
/// fills its `{directive}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSet {
    language: Language,
    sections: BTreeMap<String, String>,
    digest: String,
}

impl InstructionSet {
    pub fn builtin(language: Language) -> Self {
        let text = match language {
            Language::En => BUILTIN_EN,
            Language::Zh => BUILTIN_ZH,
        };
        InstructionSet::from_text(text, language).expect("builtin templates are well-formed")
    }

    pub fn load(path: &Path, language: Language) -> Result<Self, TemplateError> {
        InstructionSet::from_text(&std::fs::read_to_string(path)?, language)
    }

    pub fn from_text(text: &str, language: Language) -> Result<Self, TemplateError> {
        let mut sections = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let finish = |cur: Option<(String, Vec<&str>)>,
                      sections: &mut BTreeMap<String, String>|
         -> Result<(), TemplateError> {
            if let Some((name, lines)) = cur {
                let body = lines.join("\n").trim().to_string();
                if sections.insert(name.clone(), body).is_some() {
                    return Err(TemplateError::DuplicateSection(name));
                }
            }
            Ok(())
        };
        for line in text.lines() {
            let t = line.trim();
            if let Some(name) = t
                .strip_prefix("===")
                .and_then(|r| r.strip_suffix("==="))
                .map(str::trim)
                .filter(|n| !n.is_empty())
            {
                finish(current.take(), &mut sections)?;
                current = Some((name.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line.trim_end());
            } else if !t.is_empty() && !t.starts_with('#') {
                return Err(TemplateError::StrayText(t.to_string()));
            }
        }
        finish(current.take(), &mut sections)?;
        for name in REQUIRED {
            if !sections.contains_key(name) {
                return Err(TemplateError::MissingSection(name));
            }
        }
        if sections["task"].matches("{directive}").count() != 1 {
            return Err(TemplateError::DirectiveSlot);
        }
        Ok(InstructionSet {
            language,
            sections,
            digest: sha256_hex(text.as_bytes()),
        })
    }

    pub fn language(&self) -> Language {
        self.language
    }

    /// SHA-256 of the template source, recorded in prompt provenance.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn task(&self, directive: &str) -> String {
        self.sections["task"].replace("{directive}", &self.sections[directive])
    }

    pub fn predict(&self) -> String {
        self.task("directive.predict")
    }

    pub fn answer_task(&self) -> String {
        self.task("directive.answer")
    }

    pub fn reasoning_task(&self) -> String {
        self.task("directive.reasoning")
    }

    pub fn normal(&self) -> String {
        self.task("directive.normal")
    }

    pub fn reasoning_completion(&self) -> String {
        self.sections["reasoning_completion"].clone()
    }

    pub fn demand_generation(&self) -> String {
        self.sections["demand_generation"].clone()
    }

    pub fn judge(&self) -> String {
        self.sections["judge"].clone()
    }
}
