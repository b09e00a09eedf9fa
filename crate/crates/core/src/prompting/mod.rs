//! Rendering of the unguided, guided and feedback prompts.
//!
//! Templates are plain UTF-8 files with `{placeholder}` substitution. The
//! built-in set is compiled in; a template directory may override any of
//! `system.txt`, `unguided.txt`, `guided.txt` and `feedback.txt`.

mod template;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RepairTask, Tokenizer};
use crate::pipeline::{DiagnosticFlag, DivergenceDiagnostics};

pub use template::Template;

pub const DEFAULT_PROMPT_BUDGET: usize = 500;

const CONTEXT_PLACEHOLDERS: [&str; 4] = ["cve_id", "cve_description", "cwe_id", "cwe_description"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot render a repair prompt for empty code")]
    EmptyCode,
    #[error("guided prompt requires a non-empty {0}")]
    MissingContext(&'static str),
    #[error("template `{template}` references `{{{placeholder}}}` which has no value")]
    UnboundPlaceholder { template: String, placeholder: String },
    #[error("template `{template}` may not use `{{{placeholder}}}`")]
    ForbiddenPlaceholder { template: String, placeholder: String },
    #[error("template `{template}` must contain `{{{placeholder}}}`")]
    MissingPlaceholder { template: String, placeholder: &'static str },
    #[error("failed to read template {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("prompt uses {measured} tokens, over the budget of {budget}")]
    OverBudget { measured: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Unguided,
    Guided,
    Feedback,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Unguided => "unguided",
            PromptKind::Guided => "guided",
            PromptKind::Feedback => "feedback",
        })
    }
}

/// Vulnerability metadata shown to the model in guided mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub cve_id: String,
    pub cve_description: String,
    pub cwe_id: String,
    pub cwe_description: String,
}

impl PromptContext {
    pub fn from_task(task: &RepairTask) -> Self {
        Self {
            cve_id: task.cve_id.clone(),
            cve_description: task.cve_description.clone(),
            cwe_id: task.cwe_id.clone(),
            cwe_description: task.cwe_description.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let fields = [
            ("cve_id", &self.cve_id),
            ("cve_description", &self.cve_description),
            ("cwe_id", &self.cwe_id),
            ("cwe_description", &self.cwe_description),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(PromptError::MissingContext(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub token_count: usize,
    pub kind: PromptKind,
}

impl RenderedPrompt {
    pub fn new(system_text: String, user_text: String, kind: PromptKind, tokenizer: Tokenizer) -> Self {
        let token_count = tokenizer.count(&system_text) + tokenizer.count(&user_text);
        Self { system_text, user_text, token_count, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub passed: bool,
    pub measured: usize,
    pub budget: usize,
}

/// Passes when the prompt's token count is at most `budget`.
pub fn budget_check(prompt: &RenderedPrompt, budget: usize) -> BudgetCheck {
    assert!(budget > 0, "prompt budget must be positive");
    BudgetCheck { passed: prompt.token_count <= budget, measured: prompt.token_count, budget }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub system: Template,
    pub unguided: Template,
    pub guided: Template,
    pub feedback: Template,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            system: Template::new("system", include_str!("../../templates/system.txt")),
            unguided: Template::new("unguided", include_str!("../../templates/unguided.txt")),
            guided: Template::new("guided", include_str!("../../templates/guided.txt")),
            feedback: Template::new("feedback", include_str!("../../templates/feedback.txt")),
        }
    }

    /// Loads overrides from `dir`; files that are absent keep the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for slot in [&mut set.system, &mut set.unguided, &mut set.guided, &mut set.feedback] {
            let path = dir.join(format!("{}.txt", slot.name()));
            match fs::read_to_string(&path) {
                Ok(text) => *slot = Template::new(slot.name().to_string(), text),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => return Err(PromptError::Io { path, source }),
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let check = |t: &Template, allowed: &[&str], required: &[&'static str]| {
            let used = t.placeholders();
            if let Some(bad) = used.iter().find(|p| !allowed.contains(&p.as_str())) {
                return Err(PromptError::ForbiddenPlaceholder {
                    template: t.name().to_string(),
                    placeholder: bad.clone(),
                });
            }
            if let Some(req) = required.iter().find(|r| !used.contains(**r)) {
                return Err(PromptError::MissingPlaceholder {
                    template: t.name().to_string(),
                    placeholder: req,
                });
            }
            Ok(())
        };
        let mut guided_allowed = vec!["code"];
        guided_allowed.extend(CONTEXT_PLACEHOLDERS);
        check(&self.system, &[], &[])?;
        // The unguided prompt must never carry vulnerability metadata.
        check(&self.unguided, &["code"], &["code"])?;
        check(&self.guided, &guided_allowed, &["code", "cve_id", "cve_description", "cwe_id", "cwe_description"])?;
        check(&self.feedback, &["code", "diagnostics"], &["code", "diagnostics"])?;
        Ok(())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Prompter {
    templates: TemplateSet,
    tokenizer: Tokenizer,
}

impl Prompter {
    pub fn new(templates: TemplateSet, tokenizer: Tokenizer) -> Self {
        Self { templates, tokenizer }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    fn system_text(&self) -> Result<String, PromptError> {
        self.templates.system.render(&[])
    }

    pub fn render_unguided(&self, code: &str) -> Result<RenderedPrompt, PromptError> {
        if code.trim().is_empty() {
            return Err(PromptError::EmptyCode);
        }
        let user = self.templates.unguided.render(&[("code", code)])?;
        Ok(RenderedPrompt::new(self.system_text()?, user, PromptKind::Unguided, self.tokenizer))
    }

    pub fn render_guided(&self, code: &str, ctx: &PromptContext) -> Result<RenderedPrompt, PromptError> {
        if code.trim().is_empty() {
            return Err(PromptError::EmptyCode);
        }
        ctx.validate()?;
        let user = self.templates.guided.render(&[
            ("code", code),
            ("cve_id", &ctx.cve_id),
            ("cve_description", &ctx.cve_description),
            ("cwe_id", &ctx.cwe_id),
            ("cwe_description", &ctx.cwe_description),
        ])?;
        Ok(RenderedPrompt::new(self.system_text()?, user, PromptKind::Guided, self.tokenizer))
    }

    pub fn render_feedback(
        &self,
        previous_code: &str,
        diagnostics: &DivergenceDiagnostics,
    ) -> Result<RenderedPrompt, PromptError> {
        let text = describe_diagnostics(diagnostics);
        let user = self
            .templates
            .feedback
            .render(&[("code", previous_code), ("diagnostics", &text)])?;
        Ok(RenderedPrompt::new(self.system_text()?, user, PromptKind::Feedback, self.tokenizer))
    }
}

/// One bullet per diagnostic flag, or a confirmation request when clean.
pub fn describe_diagnostics(diagnostics: &DivergenceDiagnostics) -> String {
    if diagnostics.flags.is_empty() {
        return "- No problems were detected. Confirm the patch and refine it only where it is \
                still incomplete."
            .to_string();
    }
    diagnostics
        .flags
        .iter()
        .map(|flag| match flag {
            DiagnosticFlag::ExcessiveChange => format!(
                "- The patch changed too much relative to the input code (CodeBLEU similarity \
                 {:.2}, expected at least {:.2}). Keep the original structure and only change \
                 what the fix requires.",
                diagnostics.codebleu_vs_input, diagnostics.threshold
            ),
            DiagnosticFlag::ParseFailed => {
                "- The code is not valid C: it could not be parsed without syntax errors."
                    .to_string()
            }
            DiagnosticFlag::EmptyPatch => {
                "- No code was found in the previous response. Provide the complete repaired \
                 function in a fenced code block."
                    .to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
