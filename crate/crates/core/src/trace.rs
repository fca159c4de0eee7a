//! Append-only run trace: one JSON event per line, plus the accounting fold
//! and the human-readable report derived from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AgentInput,
    AgentOutput,
    Rationale,
    ToolCall,
    SimResult,
    SchemaRetry,
    Budget,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub phase: u8,
    pub actor: String,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    // not a `source`: the message already carries it, and chained reports would repeat it
    #[error("trace i/o: {0}")]
    Io(std::io::Error),
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(e)
    }
}

/// Budget counters, in the column order of the accounting table.
pub const COUNTERS: [&str; 5] = ["llm_calls", "opt_calls", "dc_sims", "full_sims_llm", "full_sims_opt"];

type Clock = Box<dyn Fn() -> u64 + Send>;

fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct Trace {
    events: Vec<TraceEvent>,
    sink: Option<BufWriter<File>>,
    clock: Clock,
}

impl std::fmt::Debug for Trace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trace").field("events", &self.events.len()).field("file", &self.sink.is_some()).finish()
    }
}

impl Default for Trace {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Trace {
    pub fn in_memory() -> Self {
        Trace { events: Vec::new(), sink: None, clock: Box::new(wall_clock_ms) }
    }

    /// Create (or truncate) an event-log file.
    pub fn to_file(path: &Path) -> Result<Self, TraceError> {
        let file = File::create(path)?;
        Ok(Trace { sink: Some(BufWriter::new(file)), ..Self::in_memory() })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Append one event; each record is flushed before returning.
    pub fn record(&mut self, phase: u8, actor: &str, kind: EventKind, payload: Value) -> Result<u64, TraceError> {
        let seq = self.events.len() as u64 + 1;
        let event = TraceEvent { seq, timestamp_ms: (self.clock)(), phase, actor: actor.to_string(), kind, payload };
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, &event).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.events.push(event);
        Ok(seq)
    }

    pub fn budget(&mut self, phase: u8, actor: &str, counter: &str, total: u64) -> Result<u64, TraceError> {
        self.record(phase, actor, EventKind::Budget, json!({ "counter": counter, "delta": 1, "total": total }))
    }

    pub fn warning(&mut self, phase: u8, actor: &str, message: impl Into<String>) -> Result<u64, TraceError> {
        self.record(phase, actor, EventKind::Warning, json!({ "message": message.into() }))
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }
}

pub fn parse_events(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TraceError::Parse { line: i + 1, reason: e.to_string() }))
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    parse_events(&std::fs::read_to_string(path)?)
}

/// Serialize events as NDJSON with every timestamp zeroed, for comparisons
/// between runs.
pub fn normalized_ndjson(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let e = TraceEvent { timestamp_ms: 0, ..e.clone() };
        out.push_str(&serde_json::to_string(&e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub llm_calls: u64,
    pub opt_calls: u64,
    pub dc_sims: u64,
    pub full_sims_llm: u64,
    pub full_sims_opt: u64,
    pub full_sims_total: u64,
}

pub fn summarize_accounting(events: &[TraceEvent]) -> Accounting {
    let mut a = Accounting::default();
    for e in events.iter().filter(|e| e.kind == EventKind::Budget) {
        let delta = e.payload.get("delta").and_then(Value::as_u64).unwrap_or(0);
        match e.payload.get("counter").and_then(Value::as_str) {
            Some("llm_calls") => a.llm_calls += delta,
            Some("opt_calls") => a.opt_calls += delta,
            Some("dc_sims") => a.dc_sims += delta,
            Some("full_sims_llm") => a.full_sims_llm += delta,
            Some("full_sims_opt") => a.full_sims_opt += delta,
            _ => {}
        }
    }
    a.full_sims_total = a.full_sims_llm + a.full_sims_opt;
    a
}

/// `(simulation index, source, fom)` for every full simulation, in order.
pub fn fom_series(events: &[TraceEvent]) -> Vec<(usize, String, f64)> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::SimResult && e.payload.get("tool").and_then(Value::as_str) == Some("full_sim"))
        .enumerate()
        .map(|(i, e)| {
            let source = e.payload.get("source").and_then(Value::as_str).unwrap_or("agent").to_string();
            let fom = e.payload.get("fom").and_then(Value::as_f64).unwrap_or(0.0);
            (i + 1, source, fom)
        })
        .collect()
}

pub fn fom_series_csv(events: &[TraceEvent]) -> String {
    let mut out = String::from("sim,source,fom,best_fom\n");
    let mut best = f64::MIN;
    for (i, src, fom) in fom_series(events) {
        best = best.max(fom);
        let _ = writeln!(out, "{i},{src},{fom},{best}");
    }
    out
}

const PHASE_TITLES: [&str; 4] = [
    "Understanding the circuit and requirements",
    "DC operating-point sizing",
    "Reasoning-only sizing",
    "Optimizer-equipped sizing",
];

pub(crate) fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.4e}")
    }
}

fn point_of(v: &Value) -> BTreeMap<String, f64> {
    v.get("point")
        .and_then(Value::as_object)
        .map(|m| m.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x))).collect())
        .unwrap_or_default()
}

fn quote(out: &mut String, text: &str) {
    for line in text.lines() {
        let _ = writeln!(out, "> {line}");
    }
    out.push('\n');
}

fn render_diff(out: &mut String, prev: &BTreeMap<String, f64>, next: &BTreeMap<String, f64>) {
    let rows: Vec<_> = next.iter().filter(|(k, v)| prev.get(*k) != Some(v)).collect();
    if rows.is_empty() {
        out.push_str("Parameters unchanged.\n\n");
        return;
    }
    out.push_str("| parameter | previous | new |\n|---|---|---|\n");
    for (k, v) in rows {
        let old = prev.get(k).map_or("-".to_string(), |p| fmt_num(*p));
        let _ = writeln!(out, "| {k} | {old} | {} |", fmt_num(*v));
    }
    out.push('\n');
}

fn render_sim(out: &mut String, p: &Value) {
    if let Some(err) = p.get("error").and_then(Value::as_str) {
        let _ = writeln!(out, "Simulation failed: {err}\n");
    }
    if let Some(regions) = p.get("regions").and_then(Value::as_object) {
        let list: Vec<String> =
            regions.iter().map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or("?"))).collect();
        if !list.is_empty() {
            let _ = writeln!(out, "Regions: {}\n", list.join(", "));
        }
    }
    if let Some(mm) = p.get("mismatches").and_then(Value::as_array) {
        let _ = writeln!(out, "DC goal mismatches: {}\n", mm.len());
    }
    if let Some(metrics) = p.get("metrics").and_then(Value::as_object) {
        out.push_str("| metric | value | met |\n|---|---|---|\n");
        let sat = p.get("satisfied").and_then(Value::as_object);
        for (k, v) in metrics {
            let met = match sat.and_then(|s| s.get(k)).and_then(Value::as_bool) {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            let _ = writeln!(out, "| {k} | {} | {met} |", v.as_f64().map_or("-".into(), fmt_num));
        }
        out.push('\n');
    }
    if let Some(fom) = p.get("fom").and_then(Value::as_f64) {
        let _ = writeln!(out, "FoM: {fom:.4}\n");
    }
}

/// Markdown narrative: one section per phase, then the accounting table.
pub fn render_report(events: &[TraceEvent]) -> String {
    let mut out = String::from("# Sizing run report\n\n");
    let mut prev_point: BTreeMap<String, f64> = BTreeMap::new();
    let mut step = 0usize;
    for (i, title) in PHASE_TITLES.iter().enumerate() {
        let phase = i as u8 + 1;
        let _ = writeln!(out, "## Phase {phase}: {title}\n");
        let in_phase: Vec<&TraceEvent> = events.iter().filter(|e| e.phase == phase).collect();
        if in_phase.is_empty() {
            out.push_str("_No events._\n\n");
            continue;
        }
        let mut opt_run: Option<(usize, f64)> = None;
        for e in in_phase {
            let p = &e.payload;
            let tool = p.get("tool").and_then(Value::as_str).unwrap_or("");
            let from_opt = p.get("source").and_then(Value::as_str) == Some("optimizer");
            match e.kind {
                EventKind::Rationale => {
                    let _ = writeln!(out, "**{}** reasoning:\n", e.actor);
                    quote(&mut out, p.get("text").and_then(Value::as_str).unwrap_or(""));
                }
                EventKind::ToolCall if tool == "optimizer" => {
                    let algo = p.get("algorithm").and_then(Value::as_str).unwrap_or("?");
                    let budget = p.get("budget").and_then(Value::as_u64).unwrap_or(0);
                    let _ = writeln!(out, "### Optimizer run ({algo}, budget {budget})\n");
                    opt_run = Some((0, f64::MIN));
                }
                EventKind::ToolCall if from_opt => {}
                EventKind::ToolCall => {
                    step += 1;
                    let _ = writeln!(out, "### Step {step}: {tool} requested by {}\n", e.actor);
                    let point = point_of(p);
                    render_diff(&mut out, &prev_point, &point);
                    prev_point = point;
                }
                EventKind::SimResult if from_opt => {
                    if let Some((n, best)) = &mut opt_run {
                        *n += 1;
                        *best = best.max(p.get("fom").and_then(Value::as_f64).unwrap_or(0.0));
                    }
                }
                EventKind::SimResult if tool == "optimizer" => {
                    let (n, best) = opt_run.take().unwrap_or((0, 0.0));
                    let _ = writeln!(out, "{n} evaluations, best FoM {best:.4}. Adopted point:\n");
                    let point = point_of(p);
                    render_diff(&mut out, &prev_point, &point);
                    prev_point = point;
                }
                EventKind::SimResult => render_sim(&mut out, p),
                EventKind::SchemaRetry => {
                    let attempt = p.get("attempt").and_then(Value::as_u64).unwrap_or(0);
                    let v = p.get("violation").and_then(Value::as_str).unwrap_or("");
                    let _ = writeln!(out, "- {} output rejected (attempt {attempt}): {v}\n", e.actor);
                }
                EventKind::Warning => {
                    let _ = writeln!(out, "- warning ({}): {}\n", e.actor, p.get("message").and_then(Value::as_str).unwrap_or(""));
                }
                EventKind::AgentInput | EventKind::AgentOutput | EventKind::Budget => {}
            }
        }
    }
    let a = summarize_accounting(events);
    out.push_str("## Accounting\n\n");
    out.push_str("| LLM calls | Opt. calls | DC sims | Full sims (LLM) | Full sims (Opt.) | Full sims (Total) |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} |",
        a.llm_calls, a.opt_calls, a.dc_sims, a.full_sims_llm, a.full_sims_opt, a.full_sims_total
    );
    out
}
