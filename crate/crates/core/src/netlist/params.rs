use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Circuit, Value};

/// A sizing point: parameter name to physical value.
pub type Point = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("parameter '{0}': lower bound must be below upper bound")]
    EmptyRange(String),
    #[error("parameter '{0}': log-scaled range must be strictly positive")]
    NonPositiveLog(String),
    #[error("parameter '{0}': bounds must be finite")]
    NonFinite(String),
    #[error("parameter '{0}' declared twice")]
    Duplicate(String),
    #[error("matching group: {0}")]
    Matching(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BindError {
    #[error("missing value for parameter '{0}'")]
    Missing(String),
    #[error("parameter '{name}' = {value:e} is outside [{lo:e}, {hi:e}]")]
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
    #[error("parameter '{0}' does not appear in the netlist")]
    UnknownParameter(String),
    #[error("placeholder '{0}' has no entry in the parameter space")]
    NotInSpace(String),
}

/// The sizing search domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    entries: Vec<ParamEntry>,
}

impl ParameterSpace {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self, SpaceError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !e.lo.is_finite() || !e.hi.is_finite() {
                return Err(SpaceError::NonFinite(e.name.clone()));
            }
            if e.lo >= e.hi {
                return Err(SpaceError::EmptyRange(e.name.clone()));
            }
            if e.scale == Scale::Log && e.lo <= 0.0 {
                return Err(SpaceError::NonPositiveLog(e.name.clone()));
            }
            if !seen.insert(e.name.clone()) {
                return Err(SpaceError::Duplicate(e.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Every space entry must name a netlist placeholder and vice versa.
    pub fn check_against(&self, circuit: &Circuit) -> Result<(), BindError> {
        for e in &self.entries {
            if !circuit.params.contains(&e.name) {
                return Err(BindError::UnknownParameter(e.name.clone()));
            }
        }
        for p in &circuit.params {
            if self.get(p).is_none() {
                return Err(BindError::NotInSpace(p.clone()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &Point) -> bool {
        self.entries.iter().all(|e| {
            point.get(&e.name).is_some_and(|v| *v >= e.lo && *v <= e.hi)
        })
    }

    /// Clamp every coordinate into its range; missing coordinates take the
    /// range center. Returns the clamped point and the names that changed.
    pub fn clamp(&self, point: &Point) -> (Point, Vec<String>) {
        let mut out = Point::new();
        let mut changed = Vec::new();
        for e in &self.entries {
            let v = match point.get(&e.name) {
                Some(v) if v.is_finite() => *v,
                _ => {
                    changed.push(e.name.clone());
                    out.insert(e.name.clone(), self.center_of(e));
                    continue;
                }
            };
            let c = v.clamp(e.lo, e.hi);
            if c != v {
                changed.push(e.name.clone());
            }
            out.insert(e.name.clone(), c);
        }
        (out, changed)
    }

    fn center_of(&self, e: &ParamEntry) -> f64 {
        match e.scale {
            Scale::Linear => 0.5 * (e.lo + e.hi),
            Scale::Log => (e.lo * e.hi).sqrt(),
        }
    }

    /// Midpoint of the space (geometric for log-scaled entries).
    pub fn center(&self) -> Point {
        self.entries.iter().map(|e| (e.name.clone(), self.center_of(e))).collect()
    }

    /// Map a point to the unit cube, in entry order. Log entries map in log space.
    pub fn to_unit(&self, point: &Point) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| {
                let v = point.get(&e.name).copied().unwrap_or_else(|| self.center_of(e));
                let u = match e.scale {
                    Scale::Linear => (v - e.lo) / (e.hi - e.lo),
                    Scale::Log => (v.ln() - e.lo.ln()) / (e.hi.ln() - e.lo.ln()),
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Point {
        self.entries
            .iter()
            .zip(u)
            .map(|(e, &ui)| {
                let ui = ui.clamp(0.0, 1.0);
                let v = match e.scale {
                    Scale::Linear => e.lo + ui * (e.hi - e.lo),
                    Scale::Log => (e.lo.ln() + ui * (e.hi.ln() - e.lo.ln())).exp(),
                };
                (e.name.clone(), v.clamp(e.lo, e.hi))
            })
            .collect()
    }

    /// Clamp into bounds and enforce matching groups. The leader of each group
    /// is first restricted to the interval where every derived member stays in
    /// range, so the result satisfies both bounds and matching.
    pub fn project(&self, point: &Point, groups: &[MatchingGroup]) -> Point {
        let (mut p, _) = self.clamp(point);
        for g in groups {
            let Some((lo, hi)) = g.leader_interval(self) else { continue };
            if let Some(v) = p.get_mut(&g.members[0]) {
                *v = v.clamp(lo, hi);
            }
        }
        apply_matching(&p, groups)
    }

    pub fn validate_groups(&self, groups: &[MatchingGroup]) -> Result<(), SpaceError> {
        let mut used = BTreeSet::new();
        for g in groups {
            g.validate(self)?;
            for m in &g.members {
                if !used.insert(m.as_str()) {
                    return Err(SpaceError::Matching(format!("parameter '{m}' appears in more than one group")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Equal,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingGroup {
    pub kind: MatchKind,
    pub members: Vec<String>,
    #[serde(default)]
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub rationale: String,
}

impl MatchingGroup {
    pub fn equal(members: &[&str]) -> Self {
        Self {
            kind: MatchKind::Equal,
            members: members.iter().map(|s| s.to_string()).collect(),
            ratios: vec![],
            rationale: String::new(),
        }
    }

    pub fn ratio(members: &[&str], ratios: &[f64]) -> Self {
        Self {
            kind: MatchKind::Ratio,
            members: members.iter().map(|s| s.to_string()).collect(),
            ratios: ratios.to_vec(),
            rationale: String::new(),
        }
    }

    /// Multiplier from the leader value to member `i`.
    fn factor(&self, i: usize) -> f64 {
        match self.kind {
            MatchKind::Equal => 1.0,
            MatchKind::Ratio => self.ratios[i] / self.ratios[0],
        }
    }

    pub fn validate(&self, space: &ParameterSpace) -> Result<(), SpaceError> {
        if self.members.len() < 2 {
            return Err(SpaceError::Matching("a group needs at least two members".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if space.get(m).is_none() {
                return Err(SpaceError::Matching(format!("unknown parameter '{m}'")));
            }
            if !seen.insert(m) {
                return Err(SpaceError::Matching(format!("parameter '{m}' listed twice")));
            }
        }
        if self.kind == MatchKind::Ratio {
            if self.ratios.len() != self.members.len() {
                return Err(SpaceError::Matching("ratios must have one entry per member".into()));
            }
            if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(SpaceError::Matching("ratios must be strictly positive".into()));
            }
        }
        if self.leader_interval(space).is_none() {
            return Err(SpaceError::Matching(format!(
                "group led by '{}' cannot satisfy every member's range",
                self.members[0]
            )));
        }
        Ok(())
    }

    /// Leader values for which every member lands inside its range.
    fn leader_interval(&self, space: &ParameterSpace) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, m) in self.members.iter().enumerate() {
            let e = space.get(m)?;
            let f = self.factor(i);
            if !(f.is_finite() && f > 0.0) {
                return None;
            }
            lo = lo.max(e.lo / f);
            hi = hi.min(e.hi / f);
        }
        // shave rounding so leader * factor never leaks past a bound
        let lo = lo + 4.0 * f64::EPSILON * lo.abs();
        let hi = hi - 4.0 * f64::EPSILON * hi.abs();
        (lo <= hi).then_some((lo, hi))
    }
}

/// Project a point onto the matching constraints. Equal groups copy the first
/// member's value; ratio groups scale it by `ratios[i] / ratios[0]`.
/// Parameters outside every group, and group leaders, are untouched.
pub fn apply_matching(point: &Point, groups: &[MatchingGroup]) -> Point {
    let mut out = point.clone();
    for g in groups {
        let Some(&leader) = point.get(&g.members[0]) else { continue };
        for (i, m) in g.members.iter().enumerate().skip(1) {
            if let Some(v) = out.get_mut(m) {
                *v = leader * g.factor(i);
            }
        }
    }
    out
}

/// Substitute every placeholder with its value from `point`.
pub fn bind_parameters(
    circuit: &Circuit,
    space: &ParameterSpace,
    point: &Point,
) -> Result<Circuit, BindError> {
    for name in &circuit.params {
        let value = *point.get(name).ok_or_else(|| BindError::Missing(name.clone()))?;
        let entry = space.get(name).ok_or_else(|| BindError::NotInSpace(name.clone()))?;
        if !(value >= entry.lo && value <= entry.hi) {
            return Err(BindError::OutOfRange { name: name.clone(), value, lo: entry.lo, hi: entry.hi });
        }
    }
    substitute_parameters(circuit, point)
}

/// Substitute placeholders without range checks; unknown names in `point`
/// are ignored.
pub fn substitute_parameters(circuit: &Circuit, point: &Point) -> Result<Circuit, BindError> {
    if let Some(name) = circuit.params.iter().find(|n| !point.contains_key(n.as_str())) {
        return Err(BindError::Missing(name.clone()));
    }
    let mut bound = circuit.clone();
    for d in &mut bound.devices {
        for v in d.values.values_mut() {
            if let Value::Param(name) = v {
                *v = Value::Num(point[name.as_str()]);
            }
        }
    }
    bound.params.clear();
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_netlist, Slot};

    fn entry(name: &str, lo: f64, hi: f64) -> ParamEntry {
        ParamEntry { name: name.into(), lo, hi, unit: "m".into(), scale: Scale::Log }
    }

    fn mos_space() -> (Circuit, ParameterSpace) {
        let c = parse_netlist("t\nM1 d g 0 0 NMOS W={W1} L={L1}\n").unwrap();
        let s = ParameterSpace::new(vec![entry("W1", 1e-7, 1e-4), entry("L1", 4.5e-8, 1e-5)]).unwrap();
        (c, s)
    }

    fn point(kv: &[(&str, f64)]) -> Point {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn bind_substitutes_values() {
        let (c, s) = mos_space();
        let b = bind_parameters(&c, &s, &point(&[("W1", 2e-6), ("L1", 1e-7)])).unwrap();
        assert!(b.is_numeric());
        assert_eq!(b.devices[0].num(Slot::W), Some(2e-6));
        assert_eq!(b.devices[0].num(Slot::L), Some(1e-7));
    }

    #[test]
    fn bind_rejects_out_of_range_and_missing() {
        let (c, s) = mos_space();
        let hi = s.get("W1").unwrap().hi;
        let err = bind_parameters(&c, &s, &point(&[("W1", hi * (1.0 + 1e-12)), ("L1", 1e-7)])).unwrap_err();
        assert!(matches!(&err, BindError::OutOfRange { name, .. } if name == "W1"));
        assert!(err.to_string().contains("W1"));
        let err = bind_parameters(&c, &s, &point(&[("W1", 2e-6)])).unwrap_err();
        assert_eq!(err, BindError::Missing("L1".into()));
    }

    #[test]
    fn space_validation() {
        assert!(matches!(ParameterSpace::new(vec![entry("a", 2.0, 1.0)]), Err(SpaceError::EmptyRange(_))));
        assert!(matches!(ParameterSpace::new(vec![entry("a", 0.0, 1.0)]), Err(SpaceError::NonPositiveLog(_))));
        assert!(matches!(
            ParameterSpace::new(vec![entry("a", 1.0, 2.0), entry("a", 1.0, 3.0)]),
            Err(SpaceError::Duplicate(_))
        ));
        let (c, s) = mos_space();
        assert!(s.check_against(&c).is_ok());
        let extra = ParameterSpace::new(vec![entry("W1", 1.0, 2.0), entry("L1", 1.0, 2.0), entry("X", 1.0, 2.0)]).unwrap();
        assert_eq!(extra.check_against(&c), Err(BindError::UnknownParameter("X".into())));
    }

    #[test]
    fn matching_examples() {
        let p = apply_matching(&point(&[("W1", 2.0), ("W2", 5.0)]), &[MatchingGroup::equal(&["W1", "W2"])]);
        assert_eq!(p, point(&[("W1", 2.0), ("W2", 2.0)]));
        let p = apply_matching(&point(&[("Wa", 3.0), ("Wb", 1.0)]), &[MatchingGroup::ratio(&["Wa", "Wb"], &[1.0, 2.0])]);
        assert_eq!(p["Wb"], 6.0);
        assert_eq!(apply_matching(&p, &[MatchingGroup::ratio(&["Wa", "Wb"], &[1.0, 2.0])]), p);
    }

    #[test]
    fn group_validation() {
        let s = ParameterSpace::new(vec![entry("a", 1.0, 2.0), entry("b", 1.0, 2.0), entry("c", 10.0, 20.0)]).unwrap();
        assert!(MatchingGroup::equal(&["a", "b"]).validate(&s).is_ok());
        assert!(MatchingGroup::equal(&["a"]).validate(&s).is_err());
        assert!(MatchingGroup::equal(&["a", "zz"]).validate(&s).is_err());
        assert!(MatchingGroup::equal(&["a", "c"]).validate(&s).is_err());
        assert!(MatchingGroup::ratio(&["a", "c"], &[1.0, 10.0]).validate(&s).is_ok());
        assert!(MatchingGroup::ratio(&["a", "c"], &[1.0, -1.0]).validate(&s).is_err());
        assert!(s
            .validate_groups(&[MatchingGroup::equal(&["a", "b"]), MatchingGroup::ratio(&["a", "c"], &[1.0, 10.0])])
            .is_err());
    }

    #[test]
    fn project_respects_bounds_and_matching() {
        let s = ParameterSpace::new(vec![entry("a", 1.0, 4.0), entry("b", 1.0, 4.0)]).unwrap();
        let g = [MatchingGroup::ratio(&["a", "b"], &[1.0, 2.0])];
        let p = s.project(&point(&[("a", 3.5), ("b", 1.0)]), &g);
        assert!(s.contains(&p));
        assert_eq!(apply_matching(&p, &g), p);
        assert!(p["a"] <= 2.0);
    }

    #[test]
    fn unit_cube_round_trip() {
        let s = ParameterSpace::new(vec![
            entry("a", 1e-6, 1e-3),
            ParamEntry { name: "b".into(), lo: -1.0, hi: 3.0, unit: String::new(), scale: Scale::Linear },
        ])
        .unwrap();
        let p = point(&[("a", 1e-5), ("b", 2.0)]);
        let u = s.to_unit(&p);
        assert!((u[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((u[1] - 0.75).abs() < 1e-12);
        let back = s.from_unit(&u);
        assert!((back["a"] - 1e-5).abs() < 1e-17);
        assert!((back["b"] - 2.0).abs() < 1e-12);
    }
}
