//! Run configuration: one TOML file describing the circuit, the search
//! space, the specs and how the agents are reached.
//!
//! Relative paths are resolved against the directory holding the config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use agentsize_core::llmclient::{ChatBackend, ContextOptions, HttpBackend, HttpConfig, Scenario, ScriptedBackend};
use agentsize_core::metrics::{validate_specs, Spec};
use agentsize_core::netlist::{parse_netlist, Circuit, MatchingGroup, ParamEntry, ParameterSpace, Point};
use agentsize_core::orchestrator::{Caps, WorkflowConfig};
use agentsize_core::pipeline::{Analysis, Problem, SlewBench};
use agentsize_core::simulator::{AcGrid, DcOptions, ModelSet};
use serde::Deserialize;

/// A configuration problem tied to the field that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub netlist: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub analysis: AnalysisConfig,
    pub models: ModelSet,
    pub params: Vec<ParamEntry>,
    pub specs: Vec<Spec>,
    #[serde(default)]
    pub matching: Vec<MatchingGroup>,
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default)]
    pub workflow: WorkflowSection,
}

fn default_seed() -> u64 {
    1
}

fn default_parallelism() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input_source: String,
    pub output_net: String,
    #[serde(default)]
    pub ac: Option<AcGrid>,
    #[serde(default)]
    pub slew: Option<SlewConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlewConfig {
    pub netlist: PathBuf,
    pub source: String,
    pub v_low: f64,
    pub v_high: f64,
    pub t_stop: f64,
    pub dt: f64,
    pub output_net: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        scenario: PathBuf,
        #[serde(default = "scripted_model")]
        model_id: String,
    },
    Http {
        endpoint: String,
        model_id: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn scripted_model() -> String {
    "scripted".into()
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsConfig {
    pub phase2_max_cycles: usize,
    pub phase3_max_full_sims: usize,
    pub phase3_max_dc_sims: usize,
    pub phase4_max_cycles: usize,
    pub phase4_max_optimizer_calls: usize,
    pub optimizer_budget_cap: usize,
}

impl Default for CapsConfig {
    fn default() -> Self {
        let c = Caps::default();
        CapsConfig {
            phase2_max_cycles: c.phase2_max_cycles,
            phase3_max_full_sims: c.phase3_max_full_sims,
            phase3_max_dc_sims: c.phase3_max_dc_sims,
            phase4_max_cycles: c.phase4_max_cycles,
            phase4_max_optimizer_calls: c.phase4_max_optimizer_calls,
            optimizer_budget_cap: c.optimizer_budget_cap,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowSection {
    pub top_k_initial: usize,
    pub stagnation_window: usize,
    pub min_improvement: f64,
    pub schema_attempts: usize,
    pub history_tail: usize,
    pub token_budget: usize,
    pub fallback_point: Option<Point>,
}

impl Default for WorkflowSection {
    fn default() -> Self {
        let w = WorkflowConfig::default();
        WorkflowSection {
            top_k_initial: w.top_k_initial,
            stagnation_window: w.stagnation_window,
            min_improvement: w.min_improvement,
            schema_attempts: w.schema_attempts,
            history_tail: w.context.history_tail,
            token_budget: w.context.token_budget,
            fallback_point: None,
        }
    }
}

/// A validated configuration with its files loaded.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: RunConfig,
    pub base_dir: PathBuf,
    pub netlist_text: String,
    pub problem: Problem,
    pub output_dir: PathBuf,
}

impl LoadedConfig {
    pub fn workflow_config(&self) -> WorkflowConfig {
        let c = &self.raw.caps;
        let w = &self.raw.workflow;
        let model_id = match &self.raw.backend {
            Some(BackendConfig::Scripted { model_id, .. } | BackendConfig::Http { model_id, .. }) => model_id.clone(),
            None => scripted_model(),
        };
        WorkflowConfig {
            caps: Caps {
                phase2_max_cycles: c.phase2_max_cycles,
                phase3_max_full_sims: c.phase3_max_full_sims,
                phase3_max_dc_sims: c.phase3_max_dc_sims,
                phase4_max_cycles: c.phase4_max_cycles,
                phase4_max_optimizer_calls: c.phase4_max_optimizer_calls,
                optimizer_budget_cap: c.optimizer_budget_cap,
            },
            seed: self.raw.seed,
            parallelism: self.raw.parallelism,
            context: ContextOptions { history_tail: w.history_tail, token_budget: w.token_budget },
            top_k_initial: w.top_k_initial,
            stagnation_window: w.stagnation_window,
            min_improvement: w.min_improvement,
            schema_attempts: w.schema_attempts,
            model_id,
            fallback_point: w.fallback_point.clone(),
            ..WorkflowConfig::default()
        }
    }

    /// Build the configured chat backend. Fails on a missing backend section.
    pub fn backend(&self) -> Result<Box<dyn ChatBackend>, ConfigError> {
        match &self.raw.backend {
            None => Err(ConfigError::new("backend", "required for `run`")),
            Some(BackendConfig::Scripted { scenario, .. }) => {
                let path = self.base_dir.join(scenario);
                let s = Scenario::load(&path).map_err(|e| ConfigError::new("backend.scenario", e.to_string()))?;
                Ok(Box::new(ScriptedBackend::new(s)))
            }
            Some(BackendConfig::Http { endpoint, model_id, api_key_env, timeout_s }) => {
                let mut cfg = HttpConfig::new(endpoint, model_id);
                cfg.timeout = Duration::from_secs_f64(*timeout_s);
                if let Some(var) = api_key_env {
                    let key = std::env::var(var).map_err(|_| {
                        ConfigError::new("backend.api_key_env", format!("environment variable {var} is not set"))
                    })?;
                    cfg.api_key = Some(key);
                }
                let b = HttpBackend::new(cfg).map_err(|e| ConfigError::new("backend", e.to_string()))?;
                Ok(Box::new(b))
            }
        }
    }
}

fn read(base: &Path, rel: &Path, field: &str) -> Result<String, ConfigError> {
    let path = base.join(rel);
    std::fs::read_to_string(&path).map_err(|e| ConfigError::new(field, format!("{}: {e}", path.display())))
}

fn load_circuit(base: &Path, rel: &Path, field: &str) -> Result<(String, Circuit), ConfigError> {
    let text = read(base, rel, field)?;
    let c = parse_netlist(&text).map_err(|e| ConfigError::new(field, format!("{}: {e}", rel.display())))?;
    Ok((text, c))
}

/// Parse and validate a config file. Every failure names the offending field.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
    let raw: RunConfig = toml::from_str(&text).map_err(|e| toml_error(&e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(raw, base_dir)
}

fn toml_error(e: &toml::de::Error) -> ConfigError {
    let msg = e.message().trim().to_string();
    // serde reports the innermost key; fall back to the document for syntax errors
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("missing field") || msg.starts_with("unknown field"))
        .map(str::to_string);
    let location = e.span().map(|s| format!(" (byte {})", s.start)).unwrap_or_default();
    ConfigError::new(field.unwrap_or_else(|| "config".into()), format!("{msg}{location}"))
}

pub fn validate(raw: RunConfig, base_dir: PathBuf) -> Result<LoadedConfig, ConfigError> {
    let (netlist_text, circuit) = load_circuit(&base_dir, &raw.netlist, "netlist")?;

    if raw.models.is_empty() {
        return Err(ConfigError::new("models", "at least one model card is required"));
    }
    for (name, card) in &raw.models {
        card.validate().map_err(|m| ConfigError::new(format!("models.{name}"), m))?;
    }
    for d in circuit.mosfets() {
        let model = d.model.as_deref().unwrap_or("");
        if !raw.models.contains_key(model) {
            return Err(ConfigError::new("models", format!("no card for model '{model}' used by {}", d.id)));
        }
    }

    if raw.params.is_empty() {
        return Err(ConfigError::new("params", "at least one parameter is required"));
    }
    let space = ParameterSpace::new(raw.params.clone()).map_err(|e| ConfigError::new("params", e.to_string()))?;
    space.check_against(&circuit).map_err(|e| ConfigError::new("params", e.to_string()))?;
    space.validate_groups(&raw.matching).map_err(|e| ConfigError::new("matching", e.to_string()))?;

    if raw.specs.is_empty() {
        return Err(ConfigError::new("specs", "at least one spec is required"));
    }
    validate_specs(&raw.specs).map_err(|e| ConfigError::new("specs", e.to_string()))?;

    let a = &raw.analysis;
    if circuit.device(&a.input_source).is_none() {
        return Err(ConfigError::new("analysis.input_source", format!("no source '{}' in the netlist", a.input_source)));
    }
    if !circuit.nets.contains(&a.output_net) {
        return Err(ConfigError::new("analysis.output_net", format!("no net '{}' in the netlist", a.output_net)));
    }
    let grid = a.ac.clone().unwrap_or_default();
    grid.frequencies().map_err(|e| ConfigError::new("analysis.ac", e.to_string()))?;
    let slew = match &a.slew {
        None => None,
        Some(s) => {
            let (_, c) = load_circuit(&base_dir, &s.netlist, "analysis.slew.netlist")?;
            space.check_against(&c).map_err(|e| ConfigError::new("analysis.slew.netlist", e.to_string()))?;
            if c.device(&s.source).is_none() {
                return Err(ConfigError::new("analysis.slew.source", format!("no source '{}' in the slew netlist", s.source)));
            }
            if !c.nets.contains(&s.output_net) {
                return Err(ConfigError::new("analysis.slew.output_net", format!("no net '{}' in the slew netlist", s.output_net)));
            }
            if !(s.dt > 0.0 && s.dt.is_finite()) {
                return Err(ConfigError::new("analysis.slew.dt", "must be positive"));
            }
            if !(s.t_stop >= s.dt && s.t_stop.is_finite()) {
                return Err(ConfigError::new("analysis.slew.t_stop", "must be at least dt"));
            }
            if !(s.v_low.is_finite() && s.v_high.is_finite()) || s.v_low == s.v_high {
                return Err(ConfigError::new("analysis.slew.v_high", "step levels must be finite and distinct"));
            }
            Some(SlewBench {
                circuit: c,
                source: s.source.clone(),
                v_low: s.v_low,
                v_high: s.v_high,
                t_stop: s.t_stop,
                dt: s.dt,
                output_net: s.output_net.clone(),
            })
        }
    };

    match &raw.backend {
        Some(BackendConfig::Scripted { scenario, .. }) => {
            let path = base_dir.join(scenario);
            Scenario::load(&path).map_err(|e| ConfigError::new("backend.scenario", e.to_string()))?;
        }
        Some(BackendConfig::Http { endpoint, timeout_s, .. }) => {
            if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                return Err(ConfigError::new("backend.endpoint", "must be an http(s) URL"));
            }
            if !(*timeout_s > 0.0 && timeout_s.is_finite()) {
                return Err(ConfigError::new("backend.timeout_s", "must be positive"));
            }
        }
        None => {}
    }

    let c = &raw.caps;
    for (name, v) in [
        ("caps.phase2_max_cycles", c.phase2_max_cycles),
        ("caps.phase3_max_full_sims", c.phase3_max_full_sims),
        ("caps.optimizer_budget_cap", c.optimizer_budget_cap),
    ] {
        if v == 0 {
            return Err(ConfigError::new(name, "must be positive"));
        }
    }
    if raw.parallelism == 0 {
        return Err(ConfigError::new("parallelism", "must be positive"));
    }
    let w = &raw.workflow;
    if w.schema_attempts == 0 {
        return Err(ConfigError::new("workflow.schema_attempts", "must be positive"));
    }
    if w.top_k_initial == 0 {
        return Err(ConfigError::new("workflow.top_k_initial", "must be positive"));
    }
    if !(w.min_improvement >= 0.0 && w.min_improvement.is_finite()) {
        return Err(ConfigError::new("workflow.min_improvement", "must be non-negative"));
    }
    if let Some(p) = &w.fallback_point {
        let unknown: Vec<&String> = p.keys().filter(|k| space.get(k).is_none()).collect();
        if !unknown.is_empty() || p.len() != space.len() {
            return Err(ConfigError::new("workflow.fallback_point", "must give every parameter and nothing else"));
        }
        if !space.contains(p) {
            return Err(ConfigError::new("workflow.fallback_point", "outside the parameter ranges"));
        }
    }

    let problem = Problem {
        circuit,
        models: raw.models.clone(),
        space,
        matching: raw.matching.clone(),
        specs: raw.specs.clone(),
        analysis: Analysis { input_source: a.input_source.clone(), output_net: a.output_net.clone(), grid, slew },
        dc_options: DcOptions::default(),
    };
    problem.validate().map_err(|m| ConfigError::new("config", m))?;
    let output_dir = base_dir.join(&raw.output_dir);
    Ok(LoadedConfig { raw, base_dir, netlist_text, problem, output_dir })
}

/// Parse `k=v` pairs with SI suffixes, as given on the command line.
pub fn parse_assignments(items: &[String]) -> Result<BTreeMap<String, f64>, ConfigError> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--param", format!("expected name=value, got '{item}'")))?;
        let v = agentsize_core::netlist::parse_si_value(v.trim())
            .ok_or_else(|| ConfigError::new("--param", format!("bad value in '{item}'")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
