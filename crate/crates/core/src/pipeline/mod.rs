//! Iterative repair: prompt, complete, extract, assess, and optionally feed
//! the assessment back for another round in the same chat session.
//!
//! Everything here works on [`RepairTask`], which carries no fixed code,
//! so no stage of generation or feedback can look at the ground truth.

mod extract;
mod outcomes;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RecordKey, RepairTask};
use crate::llm::{complete, ChatBackend, ChatSession, LlmError, ModelProfile, Role};
use crate::metric::{codebleu, parse_c, MetricError, MetricWeights};
use crate::prompting::{budget_check, BudgetCheck, PromptContext, PromptError, Prompter, RenderedPrompt};

pub use extract::{extract_patch, CandidatePatch, ExtractionStatus};
pub use outcomes::{read_outcomes, run_batch, BatchSummary, OutcomeKey, OutcomeLog, OutcomeSink};

pub const DEFAULT_THRESHOLD: f64 = 0.35;
pub const DEFAULT_ITERATION_LIMIT: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("divergence threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("iteration limit must be at least 1")]
    IterationLimit,
    #[error("unknown configuration label {0}; expected unguided, guided or guided_feedback")]
    UnknownLabel(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("prompt uses {measured} tokens, over the budget of {budget}")]
    OverBudget { measured: usize, budget: usize },
    #[error("outcome file {path}: {reason}")]
    Outcomes { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigLabel {
    Unguided,
    Guided,
    GuidedFeedback,
}

impl ConfigLabel {
    pub const ALL: [ConfigLabel; 3] = [ConfigLabel::Unguided, ConfigLabel::Guided, ConfigLabel::GuidedFeedback];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigLabel::Unguided => "unguided",
            ConfigLabel::Guided => "guided",
            ConfigLabel::GuidedFeedback => "guided_feedback",
        }
    }
}

impl fmt::Display for ConfigLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigLabel {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConfigLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticFlag {
    ExcessiveChange,
    ParseFailed,
    EmptyPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceDiagnostics {
    pub codebleu_vs_input: f64,
    pub parse_ok: bool,
    pub flags: BTreeSet<DiagnosticFlag>,
    pub threshold: f64,
}

/// Compares a candidate with the code it was meant to repair.
pub fn assess_divergence(
    input_code: &str,
    patch: &CandidatePatch,
    threshold: f64,
    weights: &MetricWeights,
) -> Result<DivergenceDiagnostics, PipelineError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PipelineError::Threshold(threshold));
    }
    let Some(code) = patch.code().filter(|c| !c.trim().is_empty()) else {
        return Ok(DivergenceDiagnostics {
            codebleu_vs_input: 0.0,
            parse_ok: false,
            flags: BTreeSet::from([DiagnosticFlag::EmptyPatch]),
            threshold,
        });
    };
    let score = match codebleu(code, input_code, weights) {
        Ok(b) => b.composite,
        Err(e @ MetricError::InvalidWeights(_)) => return Err(e.into()),
        Err(_) => 0.0,
    };
    let parse_ok = parse_c(code).map(|t| t.parse_ok()).unwrap_or(false);
    let mut flags = BTreeSet::new();
    if score < threshold {
        flags.insert(DiagnosticFlag::ExcessiveChange);
    }
    if !parse_ok {
        flags.insert(DiagnosticFlag::ParseFailed);
    }
    Ok(DivergenceDiagnostics { codebleu_vs_input: score, parse_ok, flags, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub label: ConfigLabel,
    pub iteration_limit: usize,
    pub threshold: f64,
    pub weights: MetricWeights,
    pub prompt_budget: usize,
    /// Over-budget prompts fail the record instead of logging a warning.
    pub strict_budget: bool,
}

impl PipelineConfig {
    pub fn new(label: ConfigLabel) -> Self {
        Self {
            label,
            iteration_limit: DEFAULT_ITERATION_LIMIT,
            threshold: DEFAULT_THRESHOLD,
            weights: MetricWeights::default(),
            prompt_budget: crate::prompting::DEFAULT_PROMPT_BUDGET,
            strict_budget: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PipelineError::Threshold(self.threshold));
        }
        if self.iteration_limit == 0 {
            return Err(PipelineError::IterationLimit);
        }
        Ok(self.weights.validate()?)
    }

    /// Completions this configuration requests per record.
    pub fn iterations(&self) -> usize {
        match self.label {
            ConfigLabel::GuidedFeedback => self.iteration_limit,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub prompt: RenderedPrompt,
    pub budget: BudgetCheck,
    pub raw_response: String,
    pub patch: CandidatePatch,
    pub diagnostics: DivergenceDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    /// Iterations executed so far.
    pub iteration_index: usize,
    pub history: Vec<IterationRecord>,
    pub session: ChatSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub record: RecordKey,
    pub model: String,
    pub config_label: ConfigLabel,
    pub threshold: f64,
    pub iteration_limit: usize,
    pub final_patch: CandidatePatch,
    pub trace: IterationState,
    /// Set when the record was aborted, e.g. by a backend error.
    pub failure: Option<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl RepairOutcome {
    pub fn key(&self) -> OutcomeKey {
        OutcomeKey { record: self.record.clone(), model: self.model.clone(), config_label: self.config_label }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// Always reports the same instant; used for replay so outcomes are
/// byte-identical across runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

pub struct RepairEngine<'a> {
    pub config: &'a PipelineConfig,
    pub profile: &'a ModelProfile,
    pub backend: &'a dyn ChatBackend,
    pub prompter: &'a Prompter,
    pub clock: &'a dyn Clock,
}

impl RepairEngine<'_> {
    /// Runs one record to completion. Errors end the record and are kept
    /// in `failure`; the partial trace is preserved.
    pub fn run(&self, task: &RepairTask) -> RepairOutcome {
        let started_at_ms = self.clock.now_ms();
        let mut state = IterationState { iteration_index: 0, history: Vec::new(), session: ChatSession::new(self.profile.tokenizer) };
        let failure = self.iterate(task, &mut state).err().map(|e| e.to_string());
        let final_patch = match (&failure, state.history.last()) {
            (None, Some(last)) => last.patch.clone(),
            _ => CandidatePatch::none(),
        };
        RepairOutcome {
            record: task.key(),
            model: self.profile.name.clone(),
            config_label: self.config.label,
            threshold: self.config.threshold,
            iteration_limit: self.config.iteration_limit,
            final_patch,
            trace: state,
            failure,
            started_at_ms,
            finished_at_ms: self.clock.now_ms(),
        }
    }

    fn iterate(&self, task: &RepairTask, state: &mut IterationState) -> Result<(), PipelineError> {
        self.config.validate()?;
        let first = match self.config.label {
            ConfigLabel::Unguided => self.prompter.render_unguided(&task.before_code)?,
            ConfigLabel::Guided | ConfigLabel::GuidedFeedback => {
                self.prompter.render_guided(&task.before_code, &PromptContext::from_task(task))?
            }
        };
        state.session.push(Role::System, first.system_text.clone())?;
        self.step(task, state, first)?;

        while state.iteration_index < self.config.iterations() {
            let last = state.history.last().expect("one iteration ran");
            let previous = last.patch.code().unwrap_or(&task.before_code);
            let prompt = self.prompter.render_feedback(previous, &last.diagnostics)?;
            self.step(task, state, prompt)?;
        }
        Ok(())
    }

    fn step(&self, task: &RepairTask, state: &mut IterationState, prompt: RenderedPrompt) -> Result<(), PipelineError> {
        let budget = budget_check(&prompt, self.config.prompt_budget);
        if !budget.passed {
            if self.config.strict_budget {
                return Err(PipelineError::OverBudget { measured: budget.measured, budget: budget.budget });
            }
            tracing::warn!(record = %task.key(), measured = budget.measured, budget = budget.budget, "prompt over token budget");
        }
        state.session.push(Role::User, prompt.user_text.clone())?;
        let raw_response = complete(&mut state.session, self.profile, self.backend)?;
        let patch = extract_patch(&raw_response);
        let diagnostics = assess_divergence(&task.before_code, &patch, self.config.threshold, &self.config.weights)?;
        state.history.push(IterationRecord { prompt, budget, raw_response, patch, diagnostics });
        state.iteration_index += 1;
        Ok(())
    }
}

/// One-shot convenience over [`RepairEngine`] with built-in templates and
/// the system clock.
pub fn run_repair(task: &RepairTask, config: &PipelineConfig, profile: &ModelProfile, backend: &dyn ChatBackend) -> RepairOutcome {
    let prompter = Prompter::new(crate::prompting::TemplateSet::builtin(), profile.tokenizer);
    RepairEngine { config, profile, backend, prompter: &prompter, clock: &SystemClock }.run(task)
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::llm::ChatRequest;

    const INPUT: &str = "int get(int *a, int i) {\n  return a[i];\n}";

    fn task() -> RepairTask {
        RepairTask {
            cve_id: "CVE-2020-0001".into(),
            cwe_id: "CWE-125".into(),
            function_name: "get".into(),
            file_path: "src/get.c".into(),
            before_code: INPUT.into(),
            cve_description: "Out-of-bounds read in get.".into(),
            cwe_description: "Out-of-bounds Read".into(),
            language: "C".into(),
        }
    }

    struct Script(Mutex<Vec<Result<String, LlmError>>>);

    impl Script {
        fn new(replies: Vec<Result<&str, LlmError>>) -> Self {
            Self(Mutex::new(replies.into_iter().rev().map(|r| r.map(str::to_string)).collect()))
        }
    }

    impl ChatBackend for Script {
        fn send(&self, _: &ChatRequest) -> Result<String, LlmError> {
            self.0.lock().unwrap().pop().unwrap_or(Err(LlmError::ReplayExhausted { consumed: 0 }))
        }
    }

    fn profile() -> ModelProfile {
        ModelProfile::preset("llama-3-70b").unwrap()
    }

    const FIX1: &str = "```c\nint get(int *a, int i) {\n  if (i < 0) return 0;\n  return a[i];\n}\n```";
    const FIX2: &str = "```c\nint get(int *a, int n, int i) {\n  if (i < 0 || i >= n) return 0;\n  return a[i];\n}\n```";

    #[test]
    fn identical_patch_has_no_flags() {
        let p = CandidatePatch { code: Some(INPUT.into()), extraction_status: ExtractionStatus::WellFormed };
        let d = assess_divergence(INPUT, &p, 0.35, &MetricWeights::default()).unwrap();
        assert!((d.codebleu_vs_input - 1.0).abs() < 1e-12);
        assert!(d.flags.is_empty());
        assert!(d.parse_ok);
    }

    #[test]
    fn broken_patch_fails_to_parse() {
        let p = CandidatePatch { code: Some("int get(int *a, int i) { return a[i]".into()), extraction_status: ExtractionStatus::Recovered };
        let d = assess_divergence(INPUT, &p, 0.35, &MetricWeights::default()).unwrap();
        assert!(d.flags.contains(&DiagnosticFlag::ParseFailed));
        assert!(!d.parse_ok);
    }

    #[test]
    fn absent_patch_is_empty() {
        let d = assess_divergence(INPUT, &CandidatePatch::none(), 0.35, &MetricWeights::default()).unwrap();
        assert_eq!(d.flags, BTreeSet::from([DiagnosticFlag::EmptyPatch]));
        assert_eq!(d.codebleu_vs_input, 0.0);
    }

    #[test]
    fn threshold_range() {
        assert!(matches!(
            assess_divergence(INPUT, &CandidatePatch::none(), 1.0, &MetricWeights::default()),
            Err(PipelineError::Threshold(_))
        ));
    }

    #[test]
    fn unguided_runs_once() {
        let backend = Script::new(vec![Ok(FIX1)]);
        let out = run_repair(&task(), &PipelineConfig::new(ConfigLabel::Unguided), &profile(), &backend);
        assert_eq!(out.failure, None);
        assert_eq!(out.trace.history.len(), 1);
        assert_eq!(out.final_patch, out.trace.history[0].patch);
        assert!(!out.trace.history[0].prompt.user_text.contains("CVE-2020-0001"));
    }

    #[test]
    fn feedback_runs_twice_and_keeps_second() {
        let backend = Script::new(vec![Ok(FIX1), Ok(FIX2)]);
        let out = run_repair(&task(), &PipelineConfig::new(ConfigLabel::GuidedFeedback), &profile(), &backend);
        assert_eq!(out.failure, None);
        assert_eq!(out.trace.history.len(), 2);
        assert_eq!(out.trace.iteration_index, 2);
        assert_eq!(out.final_patch, out.trace.history[1].patch);
        assert!(out.final_patch.code().unwrap().contains("i >= n"));
        // system, user, assistant, user, assistant
        assert_eq!(out.trace.session.messages().len(), 5);
    }

    #[test]
    fn empty_first_patch_still_gets_second_round() {
        let backend = Script::new(vec![Ok("Sorry, I can't."), Ok(FIX1)]);
        let out = run_repair(&task(), &PipelineConfig::new(ConfigLabel::GuidedFeedback), &profile(), &backend);
        assert_eq!(out.trace.history.len(), 2);
        assert!(out.trace.history[0].diagnostics.flags.contains(&DiagnosticFlag::EmptyPatch));
        assert!(out.trace.history[1].prompt.user_text.contains("No code was found"));
        assert_eq!(out.final_patch.extraction_status, ExtractionStatus::WellFormed);
    }

    #[test]
    fn backend_error_becomes_failure_entry() {
        let backend = Script::new(vec![Ok(FIX1), Err(LlmError::Transport { attempts: 3, message: "down".into() })]);
        let out = run_repair(&task(), &PipelineConfig::new(ConfigLabel::GuidedFeedback), &profile(), &backend);
        assert!(out.failure.as_deref().unwrap().contains("down"));
        assert_eq!(out.trace.history.len(), 1);
        assert_eq!(out.final_patch, CandidatePatch::none());
    }

    #[test]
    fn iteration_limit_is_configurable() {
        let backend = Script::new(vec![Ok(FIX1), Ok(FIX1), Ok(FIX2)]);
        let mut config = PipelineConfig::new(ConfigLabel::GuidedFeedback);
        config.iteration_limit = 3;
        let out = run_repair(&task(), &config, &profile(), &backend);
        assert_eq!(out.trace.history.len(), 3);
    }

    #[test]
    fn strict_budget_fails_record() {
        let backend = Script::new(vec![Ok(FIX1)]);
        let mut config = PipelineConfig::new(ConfigLabel::Guided);
        config.prompt_budget = 10;
        config.strict_budget = true;
        let out = run_repair(&task(), &config, &profile(), &backend);
        assert!(out.failure.unwrap().contains("budget"));

        config.strict_budget = false;
        let out = run_repair(&task(), &config, &profile(), &Script::new(vec![Ok(FIX1)]));
        assert_eq!(out.failure, None);
        assert!(!out.trace.history[0].budget.passed);
    }

    #[test]
    fn labels_parse() {
        for l in ConfigLabel::ALL {
            assert_eq!(l.as_str().parse::<ConfigLabel>().unwrap(), l);
        }
        assert!("guided+feedback".parse::<ConfigLabel>().is_err());
    }
}
