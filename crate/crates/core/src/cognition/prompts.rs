//! Prompt templates with `{placeholder}` slots.
//!
//! Defaults are compiled in from `crates/core/prompts/`; a directory with
//! files of the same names (`<family>.txt`, `<family>.demos.txt`) overrides
//! them at run time.

use std::collections::BTreeMap;
use std::path::Path;

use super::provider::PromptFamily;
use crate::error::{Error, Result};

/// Separates demonstrations inside a `.demos.txt` file.
const DEMO_SEPARATOR: &str = "---";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub family: PromptFamily,
    pub text: String,
    pub demonstrations: Vec<String>,
}

fn default_text(family: PromptFamily) -> &'static str {
    match family {
        PromptFamily::Rewrite => include_str!("../../prompts/rewrite.txt"),
        PromptFamily::Retrieve => include_str!("../../prompts/retrieve.txt"),
        PromptFamily::ModelUser => include_str!("../../prompts/model_user.txt"),
        PromptFamily::SummarizeExplicit => include_str!("../../prompts/summarize_explicit.txt"),
        PromptFamily::SummarizeImplicit => include_str!("../../prompts/summarize_implicit.txt"),
        PromptFamily::Rank => include_str!("../../prompts/rank.txt"),
        PromptFamily::Compress => include_str!("../../prompts/compress.txt"),
    }
}

fn default_demos(family: PromptFamily) -> &'static str {
    match family {
        PromptFamily::SummarizeExplicit => include_str!("../../prompts/summarize_explicit.demos.txt"),
        PromptFamily::SummarizeImplicit => include_str!("../../prompts/summarize_implicit.demos.txt"),
        _ => "",
    }
}

/// Placeholders each family's renderer fills in.
pub fn required_placeholders(family: PromptFamily) -> &'static [&'static str] {
    match family {
        PromptFamily::Rewrite => &["query"],
        PromptFamily::Retrieve => &["memory_kind", "memory", "query", "target"],
        PromptFamily::ModelUser => &["background", "interests", "recent", "query"],
        PromptFamily::SummarizeExplicit | PromptFamily::SummarizeImplicit => {
            &["demonstrations", "interactions"]
        }
        PromptFamily::Rank => &["query", "preferences", "candidates"],
        PromptFamily::Compress => &["text"],
    }
}

fn split_demos(raw: &str) -> Vec<String> {
    raw.split(&format!("\n{DEMO_SEPARATOR}\n"))
        .map(|d| d.trim().to_string())
        .filter(|d| !d.is_empty())
        .collect()
}

impl PromptTemplate {
    pub fn new(family: PromptFamily, text: impl Into<String>, demonstrations: Vec<String>) -> Result<Self> {
        let template = Self {
            family,
            text: text.into(),
            demonstrations,
        };
        template.validate()?;
        Ok(template)
    }

    fn validate(&self) -> Result<()> {
        for name in required_placeholders(self.family) {
            if !self.text.contains(&format!("{{{name}}}")) {
                return Err(Error::Config(format!(
                    "{} template is missing the {{{name}}} placeholder",
                    self.family
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    templates: BTreeMap<PromptFamily, PromptTemplate>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let templates = PromptFamily::ALL
            .into_iter()
            .map(|f| {
                let t = PromptTemplate::new(f, default_text(f), split_demos(default_demos(f)))
                    .expect("built-in templates are valid");
                (f, t)
            })
            .collect();
        Self { templates }
    }
}

impl PromptTemplates {
    /// Built-in templates with any files present in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for family in PromptFamily::ALL {
            let text_path = dir.join(format!("{}.txt", family.name()));
            let demos_path = dir.join(format!("{}.demos.txt", family.name()));
            let current = set.templates[&family].clone();
            let text = if text_path.exists() {
                std::fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?
            } else {
                current.text
            };
            let demos = if demos_path.exists() {
                split_demos(&std::fs::read_to_string(&demos_path).map_err(|e| Error::io(&demos_path, e))?)
            } else {
                current.demonstrations
            };
            set.templates.insert(family, PromptTemplate::new(family, text, demos)?);
        }
        Ok(set)
    }

    pub fn get(&self, family: PromptFamily) -> &PromptTemplate {
        &self.templates[&family]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.family, template);
    }

    /// Demonstrations for a family joined into one block.
    pub fn demonstrations(&self, family: PromptFamily) -> String {
        self.get(family)
            .demonstrations
            .join(&format!("\n{DEMO_SEPARATOR}\n"))
    }

    /// Fills the family's template. Empty values render as `None`; blank
    /// lines inside values are collapsed so every section stays one block.
    pub fn render(&self, family: PromptFamily, vars: &[(&str, &str)]) -> String {
        let text = &self.get(family).text;
        let mut out = String::with_capacity(text.len() + 256);
        let mut rest = text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    match vars.iter().find(|(k, _)| *k == name) {
                        Some((_, v)) => out.push_str(&section_value(v)),
                        None => out.push_str(&rest[open..open + close + 2]),
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn section_value(v: &str) -> String {
    let lines: Vec<&str> = v
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        "None".to_string()
    } else {
        lines.join("\n")
    }
}
