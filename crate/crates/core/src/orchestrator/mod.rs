//! The four-phase sizing workflow: understanding, DC sizing, reasoning-only
//! sizing and optimizer-equipped sizing.

mod agents;
mod schema;
mod state;

use serde_json::{json, Value};

pub use agents::{agent_spec, AgentRole, AgentSpec, ContextKey, SchemaId, Tool};
pub use schema::{
    enforce_schema, extract_json, schema_hint, validate_reply, EnforceError, EquippedDecision, RejectedReply,
    SchemaFailure, SizingProposal, Structured,
};
pub use state::{detect_stagnation, Budgets, DcSummary, HistoryEntry, WorkflowState};

use crate::llmclient::{assemble_context, ChatBackend, ChatRequest, ContextError, ContextOptions, LlmError};
use crate::netlist::Point;
use crate::optimizer::{optimize, top_k, Algorithm, BoSettings, DeSettings, OptimizerRequest, Scored};
use crate::pipeline::{DcGoals, DcOutcome, FullOutcome, Problem};
use crate::simulator::Region;
use crate::trace::{EventKind, Trace, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub phase2_max_cycles: usize,
    pub phase3_max_full_sims: usize,
    pub phase3_max_dc_sims: usize,
    pub phase4_max_cycles: usize,
    pub phase4_max_optimizer_calls: usize,
    /// Upper bound on the budget of a single optimizer call.
    pub optimizer_budget_cap: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            phase2_max_cycles: 8,
            phase3_max_full_sims: 20,
            phase3_max_dc_sims: 10,
            phase4_max_cycles: 10,
            phase4_max_optimizer_calls: 3,
            optimizer_budget_cap: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkflowConfig {
    pub caps: Caps,
    pub seed: u64,
    /// Worker threads for optimizer batches.
    pub parallelism: usize,
    pub context: ContextOptions,
    /// History entries handed to the optimizer as warm starts.
    pub top_k_initial: usize,
    pub stagnation_window: usize,
    pub min_improvement: f64,
    /// Replies accepted per agent turn, including the first.
    pub schema_attempts: usize,
    pub model_id: String,
    /// Used when the Initial Designer never produces a valid sizing.
    pub fallback_point: Option<Point>,
    pub bo: BoSettings,
    pub de: DeSettings,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            caps: Caps::default(),
            seed: 0,
            parallelism: 1,
            context: ContextOptions::default(),
            top_k_initial: 10,
            stagnation_window: 5,
            min_improvement: 0.01,
            schema_attempts: 3,
            model_id: String::new(),
            fallback_point: None,
            bo: BoSettings::default(),
            de: DeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Some evaluated point meets every hard spec.
    Complete,
    Incomplete,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub best: Option<HistoryEntry>,
    pub budgets: Budgets,
    pub state: WorkflowState,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("{agent}: {source}")]
    Backend { agent: String, source: LlmError },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("invalid problem: {0}")]
    Problem(String),
}

type Result<T> = std::result::Result<T, OrchestratorError>;

const ENGINE: &str = "engine";

fn record_call(
    backend: &dyn ChatBackend,
    trace: &mut Trace,
    budgets: &mut Budgets,
    phase: u8,
    req: &ChatRequest,
    attempt: usize,
) -> std::result::Result<String, LlmError> {
    let record = |trace: &mut Trace, kind, payload| trace.record(phase, &req.agent, kind, payload).map(|_| ());
    let io = |e: TraceError| LlmError::Transport(format!("trace write failed: {e}"));
    record(trace, EventKind::AgentInput, json!({ "attempt": attempt, "content": req.user_content })).map_err(io)?;
    budgets.llm_calls += 1;
    trace.budget(phase, &req.agent, "llm_calls", budgets.llm_calls).map_err(io)?;
    let resp = backend.complete(req)?;
    record(
        trace,
        EventKind::AgentOutput,
        json!({
            "attempt": attempt,
            "text": resp.text,
            "latency_ms": resp.latency_ms,
            "prompt_tokens": resp.token_usage.prompt,
            "completion_tokens": resp.token_usage.completion,
        }),
    )
    .map_err(io)?;
    Ok(resp.text)
}

fn point_json(p: &Point) -> Value {
    serde_json::to_value(p).expect("points serialize")
}

fn full_payload(out: &FullOutcome, source: &str) -> Value {
    let regions: serde_json::Map<String, Value> = out
        .dc
        .as_ref()
        .map(|d| d.transistor_ops.iter().map(|(k, op)| (k.clone(), json!(op.region.as_str()))).collect())
        .unwrap_or_default();
    let metrics: serde_json::Map<String, Value> =
        out.report.values.iter().map(|(m, v)| (m.as_str().to_string(), json!(v))).collect();
    let satisfied: serde_json::Map<String, Value> =
        out.report.satisfied.iter().map(|(m, v)| (m.as_str().to_string(), json!(v))).collect();
    let mut p = json!({
        "tool": "full_sim",
        "source": source,
        "fom": out.fom(),
        "metrics": metrics,
        "satisfied": satisfied,
        "regions": regions,
    });
    if let Some(e) = &out.error {
        p["error"] = json!(e);
    }
    if !out.warnings.is_empty() {
        p["warnings"] = json!(out.warnings);
    }
    p
}

pub struct Orchestrator<'a> {
    backend: &'a dyn ChatBackend,
    trace: &'a mut Trace,
    config: WorkflowConfig,
    pub state: WorkflowState,
    /// Who proposed the current point.
    current_source: String,
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        problem: Problem,
        netlist_text: String,
        config: WorkflowConfig,
        backend: &'a dyn ChatBackend,
        trace: &'a mut Trace,
    ) -> Result<Self> {
        problem.validate().map_err(OrchestratorError::Problem)?;
        Ok(Orchestrator {
            backend,
            trace,
            config,
            state: WorkflowState::new(problem, netlist_text),
            current_source: String::new(),
        })
    }

    fn warn(&mut self, actor: &str, msg: impl Into<String>) -> Result<()> {
        self.trace.warning(self.state.phase, actor, msg)?;
        Ok(())
    }

    fn done(&self) -> bool {
        self.state.best().and_then(HistoryEntry::fom).is_some_and(|f| f >= 1.0)
    }

    /// One agent turn: context, call, schema ladder. `None` when the agent
    /// never produced a valid reply; the caller degrades.
    fn ask(&mut self, role: AgentRole) -> Result<Option<Structured>> {
        let spec = agent_spec(role);
        let phase = self.state.phase;
        let content = assemble_context(&self.state, &spec, &self.config.context)?;
        let mut req = ChatRequest::new(role.name(), spec.role_prompt, content.clone(), schema_hint(spec.output_schema));
        req.model_id = self.config.model_id.clone();
        let backend_err = |source| OrchestratorError::Backend { agent: role.name().to_string(), source };

        let first = record_call(self.backend, self.trace, &mut self.state.budgets, phase, &req, 1).map_err(backend_err)?;
        let backend = self.backend;
        let trace = &mut *self.trace;
        let budgets = &mut self.state.budgets;
        let reprompt = |attempt: usize, violation: &str| {
            trace
                .record(phase, role.name(), EventKind::SchemaRetry, json!({ "attempt": attempt - 1, "violation": violation }))
                .map_err(|e| LlmError::Transport(format!("trace write failed: {e}")))?;
            let mut retry = req.clone();
            retry.user_content = format!(
                "{content}\n\nYour previous reply was rejected: {violation}\nReply again with a single JSON document that follows the schema."
            );
            record_call(backend, trace, budgets, phase, &retry, attempt)
        };
        match enforce_schema(first, spec.output_schema, &self.state.problem, self.config.schema_attempts, reprompt) {
            Ok((s, _)) => {
                let text = s.rationale();
                if !text.trim().is_empty() {
                    self.trace.record(phase, role.name(), EventKind::Rationale, json!({ "text": text }))?;
                }
                if let Structured::Sizing(p) | Structured::Equipped(EquippedDecision::Manual(p)) = &s {
                    if !p.clamped.is_empty() {
                        let msg = format!("clamped into range: {}", p.clamped.join(", "));
                        self.warn(role.name(), msg)?;
                    }
                }
                Ok(Some(s))
            }
            Err(EnforceError::Failure(f)) => {
                let last = f.attempts.last().map(|a| a.violation.clone()).unwrap_or_default();
                self.trace.record(
                    phase,
                    role.name(),
                    EventKind::SchemaRetry,
                    json!({ "attempt": f.attempts.len(), "violation": last, "final": true }),
                )?;
                self.warn(role.name(), format!("no valid reply after {} attempts; continuing without it", f.attempts.len()))?;
                Ok(None)
            }
            Err(EnforceError::Backend(e)) => Err(backend_err(e)),
        }
    }

    fn adopt(&mut self, role: AgentRole, proposal: &SizingProposal) -> Result<()> {
        let projected = self.state.problem.space.project(&proposal.parameters, &self.state.problem.matching);
        if projected != proposal.parameters {
            self.warn(role.name(), "proposal adjusted to satisfy the matching groups")?;
        }
        self.state.current = Some(projected);
        self.current_source = role.name().to_string();
        Ok(())
    }

    fn current(&self) -> Point {
        self.state.current.clone().expect("a point is set after phase 1")
    }

    fn run_dc(&mut self, requested_by: &str) -> Result<DcOutcome> {
        let phase = self.state.phase;
        let point = self.current();
        let source = self.current_source.clone();
        self.trace.record(phase, requested_by, EventKind::ToolCall, json!({ "tool": "dc_sim", "point": point_json(&point), "source": source }))?;
        let out = self.state.problem.dc_sim(&point);
        self.state.budgets.dc_sims += 1;
        self.trace.budget(phase, requested_by, "dc_sims", self.state.budgets.dc_sims)?;
        let regions: serde_json::Map<String, Value> = out
            .solution
            .as_ref()
            .map(|s| s.transistor_ops.iter().map(|(k, op)| (k.clone(), json!(op.region.as_str()))).collect())
            .unwrap_or_default();
        let mut payload = json!({ "tool": "dc_sim", "source": source, "regions": regions });
        if let Some(goals) = &self.state.dc_goals {
            let mm: Vec<Value> = out
                .mismatches(goals)
                .iter()
                .map(|m| json!({ "device": m.device, "want": m.want.as_str(), "got": m.got.map(Region::as_str) }))
                .collect();
            payload["mismatches"] = Value::Array(mm);
        }
        if let Some(e) = &out.error {
            payload["error"] = json!(e);
        }
        self.trace.record(phase, requested_by, EventKind::SimResult, payload)?;
        self.state.push_history(HistoryEntry {
            index: 0,
            phase,
            source,
            point,
            dc: Some(DcSummary::from_outcome(&out, self.state.dc_goals.as_ref())),
            report: None,
            error: out.error.clone(),
        });
        self.state.latest_dc = Some(out.clone());
        self.state.latest_tool = Some(Tool::DcSim);
        Ok(out)
    }

    fn run_full(&mut self, requested_by: &str) -> Result<f64> {
        let phase = self.state.phase;
        let point = self.current();
        let source = self.current_source.clone();
        self.trace.record(phase, requested_by, EventKind::ToolCall, json!({ "tool": "full_sim", "point": point_json(&point), "source": source }))?;
        let out = self.state.problem.full_sim(&point);
        self.state.budgets.full_sims_llm += 1;
        self.trace.budget(phase, requested_by, "full_sims_llm", self.state.budgets.full_sims_llm)?;
        self.trace.record(phase, requested_by, EventKind::SimResult, full_payload(&out, &source))?;
        self.push_full(phase, source, &out);
        self.state.latest_full = Some(out.clone());
        self.state.latest_tool = Some(Tool::FullSim);
        Ok(out.fom())
    }

    fn push_full(&mut self, phase: u8, source: String, out: &FullOutcome) {
        let dc = out.dc.clone().map(|s| DcOutcome { point: out.point.clone(), solution: Some(s), error: None });
        self.state.push_history(HistoryEntry {
            index: 0,
            phase,
            source,
            point: out.point.clone(),
            dc: dc.as_ref().map(|d| DcSummary::from_outcome(d, self.state.dc_goals.as_ref())),
            report: Some(out.report.clone()),
            error: out.error.clone(),
        });
    }

    pub fn phase1(&mut self) -> Result<()> {
        self.state.phase = 1;
        self.state.explanation = Some(match self.ask(AgentRole::CircuitExplainer)? {
            Some(Structured::Explanation(t)) => t,
            _ => "No explanation is available.".into(),
        });

        if self.state.matching_set {
            self.warn(ENGINE, "matching groups come from the configuration; Matching Finder skipped")?;
        } else {
            if let Some(Structured::Matching { groups, .. }) = self.ask(AgentRole::MatchingFinder)? {
                self.state.problem.matching = groups;
            }
            self.state.matching_set = true;
        }

        let goals = match self.ask(AgentRole::DcGoalSetter)? {
            Some(Structured::DcGoals { goals, .. }) => goals,
            _ => {
                self.warn(ENGINE, "DC goals default to saturation for every transistor")?;
                self.state.problem.circuit.mosfets().map(|d| (d.id.clone(), Region::Saturation)).collect::<DcGoals>()
            }
        };
        self.state.dc_goals = Some(goals);

        match self.ask(AgentRole::InitialDesigner)? {
            Some(Structured::Sizing(p)) => self.adopt(AgentRole::InitialDesigner, &p)?,
            _ => {
                let p = self.config.fallback_point.clone().unwrap_or_else(|| self.state.problem.space.center());
                self.warn(ENGINE, "starting from the fallback sizing")?;
                let proposal = SizingProposal { parameters: self.state.problem.space.clamp(&p).0, rationale: String::new(), clamped: vec![] };
                self.adopt(AgentRole::InitialDesigner, &proposal)?;
                self.current_source = ENGINE.into();
            }
        }
        Ok(())
    }

    pub fn phase2(&mut self) -> Result<()> {
        self.state.phase = 2;
        let cap = self.config.caps.phase2_max_cycles;
        let goals = self.state.dc_goals.clone().unwrap_or_default();
        for cycle in 1..=cap {
            let dc = self.run_dc(AgentRole::DcReviewer.name())?;
            if dc.goals_met(&goals) {
                return Ok(());
            }
            if cycle == cap {
                break;
            }
            match self.ask(AgentRole::DcReviewer)? {
                Some(Structured::DcReview { feedback, .. }) => self.state.feedback = Some(feedback),
                _ => self.state.feedback = Some("No review is available this round.".into()),
            }
            if let Some(Structured::Sizing(p)) = self.ask(AgentRole::DcSizer)? {
                self.adopt(AgentRole::DcSizer, &p)?;
            }
        }
        if cap == 0 {
            return Ok(());
        }
        // fewest mismatches wins; ties go to the later point
        let best = self
            .state
            .history
            .iter()
            .filter(|h| h.phase == 2)
            .filter_map(|h| {
                let dc = h.dc.as_ref()?;
                Some((if dc.converged { dc.mismatches.unwrap_or(0) } else { usize::MAX }, h))
            })
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.index.cmp(&a.1.index)))
            .map(|(_, h)| (h.point.clone(), h.source.clone()));
        if let Some((point, source)) = best {
            self.state.current = Some(point);
            self.current_source = source;
        }
        self.warn(ENGINE, format!("DC goals not met after {cap} cycles; continuing with the closest point"))
    }

    pub fn phase3(&mut self) -> Result<()> {
        self.state.phase = 3;
        self.state.next_tool = Tool::FullSim;
        let caps = self.config.caps;
        if caps.phase3_max_full_sims == 0 {
            return Ok(());
        }
        let (mut fulls, mut dcs) = (0, 0);
        let reviewer = AgentRole::SpecsReviewer.name();
        loop {
            let mut tool = self.state.next_tool;
            if tool == Tool::DcSim && dcs >= caps.phase3_max_dc_sims {
                self.warn(ENGINE, "DC check cap reached; running a full simulation instead")?;
                tool = Tool::FullSim;
            }
            if tool == Tool::FullSim {
                let fom = self.run_full(reviewer)?;
                fulls += 1;
                if fom >= 1.0 || fulls >= caps.phase3_max_full_sims {
                    return Ok(());
                }
            } else {
                self.run_dc(reviewer)?;
                dcs += 1;
            }
            match self.ask(AgentRole::SpecsReviewer)? {
                Some(Structured::SpecsReview { feedback, critique, next_tool }) => {
                    self.state.feedback = Some(if feedback.is_empty() { critique } else { feedback });
                    self.state.next_tool = next_tool;
                }
                _ => {
                    self.state.feedback = Some("No review is available this round.".into());
                    self.state.next_tool = Tool::FullSim;
                }
            }
            if let Some(Structured::Sizing(p)) = self.ask(AgentRole::ReasoningSizer)? {
                self.adopt(AgentRole::ReasoningSizer, &p)?;
            }
        }
    }

    pub fn phase4(&mut self) -> Result<()> {
        self.state.phase = 4;
        self.state.next_tool = Tool::FullSim;
        let caps = self.config.caps;
        let reviewer = AgentRole::AdvisorReviewer.name();
        let mut opt_calls = 0;
        for _ in 0..caps.phase4_max_cycles {
            let point = self.current();
            if self.state.next_tool == Tool::DcSim {
                self.run_dc(reviewer)?;
            } else if self.state.report_for(&point).is_none() && self.run_full(reviewer)? >= 1.0 {
                return Ok(());
            }
            self.state.stagnation =
                Some(detect_stagnation(&self.state.fom_history(), self.config.stagnation_window, self.config.min_improvement));
            match self.ask(AgentRole::AdvisorReviewer)? {
                Some(Structured::AdvisorReview { critique, feedback, next_tool, .. }) => {
                    self.state.feedback = Some(if feedback.is_empty() { critique } else { feedback });
                    self.state.next_tool = next_tool;
                }
                _ => {
                    self.state.feedback = Some("No review is available this round.".into());
                    self.state.next_tool = Tool::FullSim;
                }
            }
            match self.ask(AgentRole::EquippedSizer)? {
                Some(Structured::Equipped(EquippedDecision::Manual(p))) => self.adopt(AgentRole::EquippedSizer, &p)?,
                Some(Structured::Equipped(EquippedDecision::Optimizer { algorithm, budget, .. })) => {
                    if opt_calls >= caps.phase4_max_optimizer_calls {
                        self.warn(ENGINE, "optimizer call cap reached; keeping the current point")?;
                        continue;
                    }
                    opt_calls += 1;
                    if self.run_optimizer(algorithm, budget, opt_calls)? {
                        return Ok(());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Returns true when the optimizer found a point meeting every hard spec.
    fn run_optimizer(&mut self, algorithm: Algorithm, requested: usize, call: usize) -> Result<bool> {
        let phase = self.state.phase;
        let actor = AgentRole::EquippedSizer.name();
        let budget = requested.min(self.config.caps.optimizer_budget_cap);
        if budget < requested {
            self.warn(ENGINE, format!("optimizer budget {requested} clamped to {budget}"))?;
        }
        self.trace.record(
            phase,
            actor,
            EventKind::ToolCall,
            json!({ "tool": "optimizer", "algorithm": algorithm.to_string(), "budget": budget, "source": actor }),
        )?;
        self.state.budgets.optimizer_calls += 1;
        self.trace.budget(phase, actor, "opt_calls", self.state.budgets.optimizer_calls)?;

        let scored: Vec<Scored> = self
            .state
            .history
            .iter()
            .filter_map(|h| h.fom().map(|fom| Scored { point: h.point.clone(), fom }))
            .collect();
        let problem = &self.state.problem;
        let req = OptimizerRequest {
            space: problem.space.clone(),
            matching: problem.matching.clone(),
            initial_points: top_k(&scored, self.config.top_k_initial),
            budget,
            algorithm,
            seed: self.config.seed.wrapping_add(call as u64),
            parallelism: self.config.parallelism.max(1),
            bo: self.config.bo.clone(),
            de: self.config.de.clone(),
        };
        let result = match optimize(&req, problem.objective()) {
            Ok(r) => r,
            Err(e) => {
                self.warn(ENGINE, format!("optimizer failed: {e}"))?;
                return Ok(false);
            }
        };
        for ev in &result.evaluations {
            self.trace.record(
                phase,
                "optimizer",
                EventKind::ToolCall,
                json!({ "tool": "full_sim", "point": point_json(&ev.point), "source": "optimizer" }),
            )?;
            self.state.budgets.full_sims_opt += 1;
            self.trace.budget(phase, "optimizer", "full_sims_opt", self.state.budgets.full_sims_opt)?;
            self.trace.record(phase, "optimizer", EventKind::SimResult, full_payload(&ev.detail, "optimizer"))?;
            self.push_full(phase, "optimizer".into(), &ev.detail);
        }
        self.trace.record(
            phase,
            actor,
            EventKind::SimResult,
            json!({ "tool": "optimizer", "source": actor, "fom": result.best_fom, "point": point_json(&result.best_point), "evaluations": result.budget_used }),
        )?;
        if let Some(ev) = result.evaluations.iter().find(|e| e.point == result.best_point) {
            self.state.latest_full = Some(ev.detail.clone());
            self.state.latest_tool = Some(Tool::FullSim);
        }
        self.state.current = Some(result.best_point);
        self.current_source = "optimizer".into();
        Ok(result.best_fom >= 1.0)
    }

    pub fn run(mut self) -> Result<RunOutcome> {
        self.phase1()?;
        self.phase2()?;
        self.phase3()?;
        if !self.done() {
            self.phase4()?;
        }
        let status = if self.done() { RunStatus::Complete } else { RunStatus::Incomplete };
        let best = self.state.best().cloned();
        Ok(RunOutcome { status, best, budgets: self.state.budgets, state: self.state })
    }
}

pub fn run_workflow(
    problem: Problem,
    netlist_text: String,
    config: WorkflowConfig,
    backend: &dyn ChatBackend,
    trace: &mut Trace,
) -> Result<RunOutcome> {
    Orchestrator::new(problem, netlist_text, config, backend, trace)?.run()
}

#[cfg(test)]
mod tests;
