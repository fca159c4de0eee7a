//! Parsing and validation of agent replies.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::agents::{SchemaId, Tool};
use crate::llmclient::LlmError;
use crate::netlist::{parse_si_value, MatchKind, MatchingGroup, Point};
use crate::optimizer::Algorithm;
use crate::pipeline::{DcGoals, Problem};
use crate::simulator::Region;

#[derive(Debug, Clone, PartialEq)]
pub struct SizingProposal {
    pub parameters: Point,
    pub rationale: String,
    /// Parameters that were pulled back into range.
    pub clamped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquippedDecision {
    Manual(SizingProposal),
    Optimizer { algorithm: Algorithm, budget: usize, rationale: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structured {
    Explanation(String),
    Matching { groups: Vec<MatchingGroup>, rationale: String },
    DcGoals { goals: DcGoals, rationale: String },
    Sizing(SizingProposal),
    DcReview { report: String, feedback: String },
    SpecsReview { critique: String, feedback: String, next_tool: Tool },
    AdvisorReview { critique: String, feedback: String, advise_optimizer: bool, next_tool: Tool },
    Equipped(EquippedDecision),
}

impl Structured {
    /// Text worth showing as the agent's reasoning.
    pub fn rationale(&self) -> String {
        match self {
            Structured::Explanation(t) => t.clone(),
            Structured::Matching { rationale, .. } | Structured::DcGoals { rationale, .. } => rationale.clone(),
            Structured::Sizing(p) | Structured::Equipped(EquippedDecision::Manual(p)) => p.rationale.clone(),
            Structured::DcReview { report, feedback } => join(report, feedback),
            Structured::SpecsReview { critique, feedback, .. } | Structured::AdvisorReview { critique, feedback, .. } => {
                join(critique, feedback)
            }
            Structured::Equipped(EquippedDecision::Optimizer { rationale, .. }) => rationale.clone(),
        }
    }
}

fn join(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a}\n\n{b}"),
    }
}

pub fn schema_hint(id: SchemaId) -> &'static str {
    match id {
        SchemaId::Explanation => r#"{"explanation": "<text>"}"#,
        SchemaId::Matching => {
            r#"{"groups": [{"kind": "equal" | "ratio", "members": ["<param>", ...], "ratios": [<number>, ...] (ratio only), "rationale": "<text>"}], "rationale": "<text>"}"#
        }
        SchemaId::DcGoals => r#"{"goals": {"<transistor>": "saturation" | "triode" | "cutoff", ...}, "rationale": "<text>"}"#,
        SchemaId::Sizing => r#"{"parameters": {"<param>": <number in SI units>, ... every parameter ...}, "rationale": "<text>"}"#,
        SchemaId::DcReview => r#"{"report": "<per-device findings>", "feedback": "<suggested changes>"}"#,
        SchemaId::SpecsReview => {
            r#"{"critique": "<text>", "feedback": "<suggested changes>", "next_tool": "full_sim" | "dc_sim"}"#
        }
        SchemaId::AdvisorReview => {
            r#"{"critique": "<text>", "feedback": "<text>", "advise_optimizer": true | false, "next_tool": "full_sim" | "dc_sim"}"#
        }
        SchemaId::EquippedDecision => {
            r#"{"mode": "manual", "parameters": {"<param>": <number>, ...}, "rationale": "<text>"} or {"mode": "optimizer", "algorithm": "bo" | "de", "budget": <integer>, "rationale": "<text>"}"#
        }
    }
}

/// Pull the JSON object out of a reply that may wrap it in prose or fences.
pub fn extract_json(raw: &str) -> Result<Value, String> {
    let t = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(t) {
        return Ok(v);
    }
    let (Some(a), Some(b)) = (t.find('{'), t.rfind('}')) else {
        return Err("reply contains no JSON object".into());
    };
    if b < a {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&t[a..=b]).map_err(|e| format!("invalid JSON: {e}"))
}

fn object(v: &Value) -> Result<&Map<String, Value>, String> {
    v.as_object().ok_or_else(|| "reply must be a JSON object".to_string())
}

fn req_str(o: &Map<String, Value>, key: &str) -> Result<String, String> {
    match o.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("field \"{key}\" must be a string")),
        None => Err(format!("missing field \"{key}\"")),
    }
}

fn opt_str(o: &Map<String, Value>, key: &str) -> Result<String, String> {
    match o.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(_) => req_str(o, key),
    }
}

fn tool_field(o: &Map<String, Value>, required: bool) -> Result<Tool, String> {
    match o.get("next_tool") {
        None | Some(Value::Null) if !required => Ok(Tool::FullSim),
        None => Err("missing field \"next_tool\"".into()),
        Some(Value::String(s)) if s == "full_sim" => Ok(Tool::FullSim),
        Some(Value::String(s)) if s == "dc_sim" => Ok(Tool::DcSim),
        Some(other) => Err(format!("next_tool must be \"full_sim\" or \"dc_sim\", got {other}")),
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse_si_value(s.trim()),
        _ => None,
    }
}

fn sizing(o: &Map<String, Value>, problem: &Problem) -> Result<SizingProposal, String> {
    let params = match o.get("parameters") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err("field \"parameters\" must be an object".into()),
        None => return Err("missing field \"parameters\"".into()),
    };
    let space = &problem.space;
    for k in params.keys() {
        if space.get(k).is_none() {
            return Err(format!("unknown parameter \"{k}\""));
        }
    }
    let mut point = Point::new();
    for name in space.names() {
        let v = params.get(name).ok_or_else(|| format!("missing parameter \"{name}\""))?;
        let x = number(v).filter(|x| x.is_finite()).ok_or_else(|| format!("parameter \"{name}\" is not a finite number"))?;
        point.insert(name.to_string(), x);
    }
    let (parameters, clamped) = space.clamp(&point);
    Ok(SizingProposal { parameters, rationale: opt_str(o, "rationale")?, clamped })
}

fn matching(o: &Map<String, Value>, problem: &Problem) -> Result<Structured, String> {
    let list = match o.get("groups") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err("field \"groups\" must be an array".into()),
        None => return Err("missing field \"groups\"".into()),
    };
    let mut groups = Vec::new();
    for (i, g) in list.iter().enumerate() {
        let g = g.as_object().ok_or_else(|| format!("group {} must be an object", i + 1))?;
        let kind = match g.get("kind").and_then(Value::as_str).unwrap_or("equal") {
            "equal" => MatchKind::Equal,
            "ratio" => MatchKind::Ratio,
            k => return Err(format!("group {}: unknown kind \"{k}\"", i + 1)),
        };
        let members: Vec<String> = g
            .get("members")
            .and_then(Value::as_array)
            .ok_or_else(|| format!("group {}: missing \"members\" array", i + 1))?
            .iter()
            .map(|m| m.as_str().map(str::to_string).ok_or_else(|| format!("group {}: members must be strings", i + 1)))
            .collect::<Result<_, _>>()?;
        let ratios = match g.get("ratios") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) => a
                .iter()
                .map(|r| r.as_f64().ok_or_else(|| format!("group {}: ratios must be numbers", i + 1)))
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(format!("group {}: \"ratios\" must be an array", i + 1)),
        };
        groups.push(MatchingGroup { kind, members, ratios, rationale: opt_str(g, "rationale")? });
    }
    problem.space.validate_groups(&groups).map_err(|e| e.to_string())?;
    Ok(Structured::Matching { groups, rationale: opt_str(o, "rationale")? })
}

fn region(s: &str) -> Option<Region> {
    match s.to_ascii_lowercase().as_str() {
        "saturation" => Some(Region::Saturation),
        "triode" | "linear" => Some(Region::Triode),
        "cutoff" => Some(Region::Cutoff),
        _ => None,
    }
}

fn dc_goals(o: &Map<String, Value>, problem: &Problem) -> Result<Structured, String> {
    let m = match o.get("goals") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err("field \"goals\" must be an object".into()),
        None => return Err("missing field \"goals\"".into()),
    };
    let devices: BTreeMap<String, String> =
        problem.circuit.mosfets().map(|d| (d.id.to_ascii_uppercase(), d.id.clone())).collect();
    let mut goals = BTreeMap::new();
    for (k, v) in m {
        let id = devices.get(&k.to_ascii_uppercase()).ok_or_else(|| format!("unknown transistor \"{k}\""))?;
        let r = v.as_str().and_then(region).ok_or_else(|| format!("transistor \"{k}\": region must be saturation, triode or cutoff"))?;
        goals.insert(id.clone(), r);
    }
    if let Some(missing) = devices.values().find(|d| !goals.contains_key(*d)) {
        return Err(format!("missing goal for transistor \"{missing}\""));
    }
    Ok(Structured::DcGoals { goals, rationale: opt_str(o, "rationale")? })
}

/// Validate one reply against a schema. `Err` carries the violation.
pub fn validate_reply(id: SchemaId, raw: &str, problem: &Problem) -> Result<Structured, String> {
    let v = extract_json(raw)?;
    let o = object(&v)?;
    Ok(match id {
        SchemaId::Explanation => Structured::Explanation(req_str(o, "explanation")?),
        SchemaId::Matching => matching(o, problem)?,
        SchemaId::DcGoals => dc_goals(o, problem)?,
        SchemaId::Sizing => Structured::Sizing(sizing(o, problem)?),
        SchemaId::DcReview => Structured::DcReview { report: req_str(o, "report")?, feedback: req_str(o, "feedback")? },
        SchemaId::SpecsReview => Structured::SpecsReview {
            critique: req_str(o, "critique")?,
            feedback: opt_str(o, "feedback")?,
            next_tool: tool_field(o, true)?,
        },
        SchemaId::AdvisorReview => Structured::AdvisorReview {
            critique: req_str(o, "critique")?,
            feedback: opt_str(o, "feedback")?,
            advise_optimizer: o
                .get("advise_optimizer")
                .and_then(Value::as_bool)
                .ok_or("field \"advise_optimizer\" must be true or false")?,
            next_tool: tool_field(o, false)?,
        },
        SchemaId::EquippedDecision => match o.get("mode").and_then(Value::as_str) {
            Some("manual") => Structured::Equipped(EquippedDecision::Manual(sizing(o, problem)?)),
            Some("optimizer") => {
                let algorithm = req_str(o, "algorithm")?.parse::<Algorithm>()?;
                let budget = o
                    .get("budget")
                    .and_then(Value::as_u64)
                    .filter(|b| *b > 0)
                    .ok_or("field \"budget\" must be a positive integer")?;
                Structured::Equipped(EquippedDecision::Optimizer {
                    algorithm,
                    budget: budget as usize,
                    rationale: opt_str(o, "rationale")?,
                })
            }
            _ => return Err("field \"mode\" must be \"manual\" or \"optimizer\"".into()),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedReply {
    pub text: String,
    pub violation: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no valid reply after {} attempts; last violation: {}", .attempts.len(), .attempts.last().map_or("", |a| a.violation.as_str()))]
pub struct SchemaFailure {
    pub attempts: Vec<RejectedReply>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnforceError {
    #[error(transparent)]
    Failure(#[from] SchemaFailure),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// Validate `first`; on a violation call `reprompt(attempt, violation)` for a
/// fresh reply, up to `max_attempts` replies in total. Returns the parsed
/// output and the number of replies consumed.
pub fn enforce_schema<F>(
    first: String,
    id: SchemaId,
    problem: &Problem,
    max_attempts: usize,
    mut reprompt: F,
) -> Result<(Structured, usize), EnforceError>
where
    F: FnMut(usize, &str) -> Result<String, LlmError>,
{
    let mut text = first;
    let mut rejected = Vec::new();
    for attempt in 1..=max_attempts.max(1) {
        match validate_reply(id, &text, problem) {
            Ok(s) => return Ok((s, attempt)),
            Err(violation) => {
                rejected.push(RejectedReply { text: std::mem::take(&mut text), violation: violation.clone() });
                if attempt < max_attempts {
                    text = reprompt(attempt + 1, &violation)?;
                }
            }
        }
    }
    Err(SchemaFailure { attempts: rejected }.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Metric, Spec};
    use crate::testbench::two_stage_problem;
    use serde_json::json;

    fn problem() -> Problem {
        two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)])
    }

    fn full_params(p: &Problem) -> Map<String, Value> {
        p.space.center().into_iter().map(|(k, v)| (k, json!(v))).collect()
    }

    #[test]
    fn fenced_json_is_extracted() {
        let v = extract_json("Sure:\n```json\n{\"explanation\": \"x\"}\n```").unwrap();
        assert_eq!(v["explanation"], "x");
        assert!(extract_json("no json here").is_err());
    }

    #[test]
    fn missing_parameter_is_named() {
        let p = problem();
        let mut params = full_params(&p);
        let gone = params.keys().nth(2).unwrap().clone();
        params.remove(&gone);
        let raw = json!({"parameters": params, "rationale": "r"}).to_string();
        let err = validate_reply(SchemaId::Sizing, &raw, &p).unwrap_err();
        assert_eq!(err, format!("missing parameter \"{gone}\""));
    }

    #[test]
    fn out_of_range_is_clamped_not_rejected() {
        let p = problem();
        let mut params = full_params(&p);
        let name = params.keys().next().unwrap().clone();
        params.insert(name.clone(), json!(1.0e3));
        let raw = json!({"parameters": params}).to_string();
        let Structured::Sizing(s) = validate_reply(SchemaId::Sizing, &raw, &p).unwrap() else { panic!() };
        assert_eq!(s.clamped, vec![name.clone()]);
        assert_eq!(s.parameters[&name], p.space.get(&name).unwrap().hi);
    }

    #[test]
    fn si_strings_are_accepted() {
        let p = problem();
        let mut params = full_params(&p);
        let name = params.keys().next().unwrap().clone();
        let lo = p.space.get(&name).unwrap().lo;
        params.insert(name.clone(), json!(format!("{}u", lo * 1e6)));
        let raw = json!({"parameters": params}).to_string();
        let Structured::Sizing(s) = validate_reply(SchemaId::Sizing, &raw, &p).unwrap() else { panic!() };
        assert!((s.parameters[&name] - lo).abs() <= 1e-12 * lo.abs().max(1.0));
    }

    #[test]
    fn goals_must_cover_every_transistor() {
        let p = problem();
        let mut goals: Map<String, Value> = p.circuit.mosfets().map(|d| (d.id.clone(), json!("saturation"))).collect();
        let raw = json!({"goals": goals}).to_string();
        assert!(validate_reply(SchemaId::DcGoals, &raw, &p).is_ok());
        let first = goals.keys().next().unwrap().clone();
        goals.remove(&first);
        let err = validate_reply(SchemaId::DcGoals, &json!({"goals": goals}).to_string(), &p).unwrap_err();
        assert!(err.contains(&first), "{err}");
        goals.insert("MX9".into(), json!("saturation"));
        assert!(validate_reply(SchemaId::DcGoals, &json!({"goals": goals}).to_string(), &p).is_err());
    }

    #[test]
    fn ladder_stops_at_first_valid_reply() {
        let p = problem();
        let good = json!({"explanation": "ok"}).to_string();
        let mut calls = vec![];
        let (s, used) = enforce_schema("garbage".into(), SchemaId::Explanation, &p, 3, |n, v| {
            calls.push((n, v.to_string()));
            Ok(good.clone())
        })
        .unwrap();
        assert_eq!(s, Structured::Explanation("ok".into()));
        assert_eq!(used, 2);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].0, 2);
    }

    #[test]
    fn three_bad_replies_fail() {
        let p = problem();
        let err = enforce_schema("{}".into(), SchemaId::Explanation, &p, 3, |_, _| Ok("{}".into())).unwrap_err();
        let EnforceError::Failure(f) = err else { panic!() };
        assert_eq!(f.attempts.len(), 3);
        assert!(f.attempts.iter().all(|a| a.violation == "missing field \"explanation\""));
    }

    #[test]
    fn backend_error_during_reprompt_propagates() {
        let p = problem();
        let err = enforce_schema("{}".into(), SchemaId::Explanation, &p, 3, |_, _| Err(LlmError::Auth(401))).unwrap_err();
        assert_eq!(err, EnforceError::Backend(LlmError::Auth(401)));
    }

    #[test]
    fn equipped_modes() {
        let p = problem();
        let raw = json!({"mode": "optimizer", "algorithm": "de", "budget": 40, "rationale": "stuck"}).to_string();
        assert_eq!(
            validate_reply(SchemaId::EquippedDecision, &raw, &p).unwrap(),
            Structured::Equipped(EquippedDecision::Optimizer { algorithm: Algorithm::De, budget: 40, rationale: "stuck".into() })
        );
        let bad = json!({"mode": "optimizer", "algorithm": "pso", "budget": 40}).to_string();
        assert!(validate_reply(SchemaId::EquippedDecision, &bad, &p).is_err());
        let zero = json!({"mode": "optimizer", "algorithm": "bo", "budget": 0}).to_string();
        assert!(validate_reply(SchemaId::EquippedDecision, &zero, &p).is_err());
    }
}
