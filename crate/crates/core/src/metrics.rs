//! Performance extraction from simulation results and the figure of merit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::simulator::{AcSweep, DcSolution, TransientTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GainDb,
    UgbwHz,
    PhaseMarginDeg,
    PowerW,
    SlewRateVps,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::GainDb, Metric::UgbwHz, Metric::PhaseMarginDeg, Metric::PowerW, Metric::SlewRateVps];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::GainDb => "gain_db",
            Metric::UgbwHz => "ugbw_hz",
            Metric::PhaseMarginDeg => "phase_margin_deg",
            Metric::PowerW => "power_w",
            Metric::SlewRateVps => "slew_rate_vps",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardness {
    #[default]
    Hard,
    SoftObjective,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spec {
    pub metric: Metric,
    pub direction: Direction,
    pub target: f64,
    #[serde(default)]
    pub hardness: Hardness,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl Spec {
    pub fn at_least(metric: Metric, target: f64) -> Self {
        Spec { metric, direction: Direction::AtLeast, target, hardness: Hardness::Hard, weight: 1.0 }
    }

    pub fn at_most(metric: Metric, target: f64) -> Self {
        Spec { metric, direction: Direction::AtMost, target, hardness: Hardness::Hard, weight: 1.0 }
    }

    pub fn is_met(&self, value: f64) -> bool {
        match self.direction {
            Direction::AtLeast => value >= self.target,
            Direction::AtMost => value <= self.target,
        }
    }

    /// Satisfaction ratio in `[0, 1]`; exactly 1 iff the spec is met.
    pub fn ratio(&self, value: Option<f64>) -> f64 {
        let Some(v) = value.filter(|v| v.is_finite()) else {
            return 0.0;
        };
        if self.is_met(v) {
            return 1.0;
        }
        let t = self.target;
        let r = match self.direction {
            Direction::AtLeast if t > 0.0 && v > 0.0 => v / t,
            Direction::AtMost if t > 0.0 && v > 0.0 => t / v,
            _ => 0.0,
        };
        r.clamp(0.0, 1.0).min(BELOW_ONE)
    }
}

/// Largest float below 1; keeps an unmet spec from rounding to full credit.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("spec for {0}: target must be finite")]
    NonFiniteTarget(Metric),
    #[error("spec for {0}: weight must be positive")]
    BadWeight(Metric),
    #[error("more than one spec for {0}")]
    Duplicate(Metric),
}

pub fn validate_specs(specs: &[Spec]) -> Result<(), SpecError> {
    let mut seen = Vec::new();
    for s in specs {
        if !s.target.is_finite() {
            return Err(SpecError::NonFiniteTarget(s.metric));
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(SpecError::BadWeight(s.metric));
        }
        if seen.contains(&s.metric) {
            return Err(SpecError::Duplicate(s.metric));
        }
        seen.push(s.metric);
    }
    Ok(())
}

pub type MetricValues = BTreeMap<Metric, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: MetricValues,
    pub satisfied: BTreeMap<Metric, bool>,
    pub fom: f64,
}

impl MetricReport {
    pub fn all_hard_met(&self) -> bool {
        self.fom >= 1.0
    }
}

/// Weighted mean of hard-spec satisfaction ratios. No hard specs gives 1.
pub fn compute_fom(values: &MetricValues, specs: &[Spec]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut all_met = true;
    for s in specs.iter().filter(|s| s.hardness == Hardness::Hard) {
        let r = s.ratio(values.get(&s.metric).copied());
        all_met &= r >= 1.0;
        num += s.weight * r;
        den += s.weight;
    }
    if den == 0.0 {
        return 1.0;
    }
    let fom = (num / den).clamp(0.0, 1.0);
    if all_met {
        1.0
    } else {
        fom.min(BELOW_ONE)
    }
}

pub fn evaluate(values: MetricValues, specs: &[Spec]) -> MetricReport {
    let satisfied = specs
        .iter()
        .map(|s| (s.metric, values.get(&s.metric).is_some_and(|v| s.is_met(*v))))
        .collect();
    let fom = compute_fom(&values, specs);
    MetricReport { values, satisfied, fom }
}

/// Extract every measurable metric. `tran` is the slew-rate trace and the
/// net whose waveform is differentiated.
pub fn extract_metrics(ac: &AcSweep, dc: &DcSolution, tran: Option<(&TransientTrace, &str)>) -> MetricValues {
    let mut out = MetricValues::new();
    if let Some(h0) = ac.transfer.first() {
        out.insert(Metric::GainDb, 20.0 * h0.norm().log10());
    }
    if let Some((ugbw, phase)) = unity_crossing(ac) {
        out.insert(Metric::UgbwHz, ugbw);
        if let Some(p) = phase {
            out.insert(Metric::PhaseMarginDeg, 180.0 + p);
        }
    }
    out.insert(Metric::PowerW, supply_power(dc));
    if let Some((tr, net)) = tran {
        if let Some(sr) = slew_rate(tr, net) {
            out.insert(Metric::SlewRateVps, sr);
        }
    }
    out
}

/// Sum of `|V * I|` over every independent voltage source.
pub fn supply_power(dc: &DcSolution) -> f64 {
    dc.source_voltages
        .iter()
        .map(|(id, v)| (v * dc.branch_currents.get(id).copied().unwrap_or(0.0)).abs())
        .sum()
}

/// Phase of the transfer in degrees, unwrapped along the sweep and shifted
/// so the low-frequency phase lies within 90 degrees of zero.
pub fn unwrapped_phase_deg(ac: &AcSweep) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(ac.transfer.len());
    for h in &ac.transfer {
        let p = h.arg().to_degrees();
        let v = match out.last() {
            Some(prev) => p + 360.0 * ((prev - p) / 360.0).round(),
            None => p,
        };
        out.push(v);
    }
    if let Some(&p0) = out.first() {
        let shift = 180.0 * (p0 / 180.0).round();
        out.iter_mut().for_each(|p| *p -= shift);
    }
    out
}

/// First downward crossing of `|H| = 1`, interpolated linearly in
/// (log f, log |H|). Returns `(0, None)` when the gain starts below one and
/// `None` when it never drops below one.
fn unity_crossing(ac: &AcSweep) -> Option<(f64, Option<f64>)> {
    let mags: Vec<f64> = ac.transfer.iter().map(|h| h.norm()).collect();
    if *mags.first()? < 1.0 {
        return Some((0.0, None));
    }
    let phase = unwrapped_phase_deg(ac);
    for i in 0..mags.len().saturating_sub(1) {
        if mags[i] >= 1.0 && mags[i + 1] < 1.0 {
            let (la, lb) = (mags[i].ln(), mags[i + 1].ln());
            let t = la / (la - lb);
            if t == 0.0 {
                return Some((ac.freqs_hz[i], Some(phase[i])));
            }
            let (fa, fb) = (ac.freqs_hz[i].ln(), ac.freqs_hz[i + 1].ln());
            let f = (fa + t * (fb - fa)).exp();
            let p = phase[i] + t * (phase[i + 1] - phase[i]);
            return Some((f, Some(p)));
        }
    }
    None
}

/// Maximum `|dv/dt|` of a probed waveform.
pub fn slew_rate(tr: &TransientTrace, net: &str) -> Option<f64> {
    let v = tr.node_voltages.get(net)?;
    tr.times_s
        .windows(2)
        .zip(v.windows(2))
        .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::AcGrid;
    use num_complex::Complex64;

    fn one_pole(a0: f64, fp: f64) -> AcSweep {
        let freqs = AcGrid { f_lo: 1e-6, f_hi: 1e8, pts_per_decade: 20 }.frequencies().unwrap();
        let transfer: Vec<Complex64> =
            freqs.iter().map(|f| Complex64::new(a0, 0.0) / Complex64::new(1.0, f / fp)).collect();
        AcSweep { freqs_hz: freqs, response: transfer.clone(), transfer, input_magnitude: 1.0 }
    }

    #[test]
    fn one_pole_metrics() {
        let ac = one_pole(100.0, 1e3);
        let m = extract_metrics(&ac, &DcSolution::default(), None);
        // 1 µHz sits far enough below the pole that |H| rounds to exactly 100
        assert_eq!(m[&Metric::GainDb], 40.0);
        let ugbw_exact = 1e3 * (100.0f64 * 100.0 - 1.0).sqrt();
        assert!((m[&Metric::UgbwHz] - ugbw_exact).abs() / ugbw_exact < 0.02);
        assert!((m[&Metric::PhaseMarginDeg] - 90.0).abs() < 2.0);
        assert!(!m.contains_key(&Metric::SlewRateVps));
    }

    #[test]
    fn below_unity_everywhere_gives_zero_ugbw() {
        let ac = one_pole(0.5, 1e3);
        let m = extract_metrics(&ac, &DcSolution::default(), None);
        assert_eq!(m[&Metric::UgbwHz], 0.0);
        assert!(!m.contains_key(&Metric::PhaseMarginDeg));
    }

    #[test]
    fn crossing_on_a_grid_point_is_exact() {
        let freqs = vec![10.0, 100.0, 1000.0];
        let transfer = vec![Complex64::new(10.0, 0.0), Complex64::new(0.0, -1.0), Complex64::new(0.1, 0.0)];
        let ac = AcSweep { freqs_hz: freqs, response: transfer.clone(), transfer, input_magnitude: 1.0 };
        let m = extract_metrics(&ac, &DcSolution::default(), None);
        assert_eq!(m[&Metric::UgbwHz], 100.0);
        assert_eq!(m[&Metric::PhaseMarginDeg], 90.0);
    }

    #[test]
    fn inverting_amplifier_phase_is_referenced_to_its_dc_phase() {
        let mut ac = one_pole(100.0, 1e3);
        ac.transfer.iter_mut().for_each(|h| *h = -*h);
        let m = extract_metrics(&ac, &DcSolution::default(), None);
        assert!((m[&Metric::PhaseMarginDeg] - 90.0).abs() < 2.0);
    }

    #[test]
    fn divider_power() {
        let mut dc = DcSolution::default();
        dc.source_voltages.insert("V1".into(), 1.0);
        dc.branch_currents.insert("V1".into(), -0.5e-3);
        assert!((supply_power(&dc) - 0.5e-3).abs() < 1e-18);
    }

    #[test]
    fn fom_examples() {
        let specs = [Spec::at_least(Metric::GainDb, 60.0), Spec::at_most(Metric::PowerW, 1e-3)];
        let mut v = MetricValues::new();
        v.insert(Metric::GainDb, 40.0);
        v.insert(Metric::PowerW, 0.5e-3);
        assert!((compute_fom(&v, &specs) - (40.0 / 60.0 + 1.0) / 2.0).abs() < 1e-12);
        v.insert(Metric::GainDb, 70.0);
        assert_eq!(compute_fom(&v, &specs), 1.0);
        assert_eq!(compute_fom(&v, &[]), 1.0);
        v.remove(&Metric::PowerW);
        assert_eq!(compute_fom(&v, &specs), 0.5);
    }

    #[test]
    fn soft_specs_do_not_enter_fom() {
        let mut soft = Spec::at_most(Metric::PowerW, 1e-6);
        soft.hardness = Hardness::SoftObjective;
        let specs = [Spec::at_least(Metric::GainDb, 60.0), soft];
        let v = MetricValues::from([(Metric::GainDb, 61.0), (Metric::PowerW, 1.0)]);
        let r = evaluate(v, &specs);
        assert_eq!(r.fom, 1.0);
        assert!(!r.satisfied[&Metric::PowerW]);
    }

    #[test]
    fn near_miss_never_rounds_to_one() {
        let specs = [Spec::at_least(Metric::GainDb, 1.0); 1];
        let v = MetricValues::from([(Metric::GainDb, 1.0 - f64::EPSILON / 2.0)]);
        assert!(compute_fom(&v, &specs) < 1.0);
    }

    #[test]
    fn weights_and_validation() {
        let mut a = Spec::at_least(Metric::GainDb, 100.0);
        a.weight = 3.0;
        let b = Spec::at_least(Metric::UgbwHz, 1e6);
        let v = MetricValues::from([(Metric::GainDb, 50.0), (Metric::UgbwHz, 2e6)]);
        assert!((compute_fom(&v, &[a.clone(), b.clone()]) - (3.0 * 0.5 + 1.0) / 4.0).abs() < 1e-12);
        assert_eq!(validate_specs(&[a.clone(), a.clone()]), Err(SpecError::Duplicate(Metric::GainDb)));
        let bad = Spec { target: f64::NAN, ..b };
        assert!(validate_specs(&[bad]).is_err());
        assert_eq!("slew_rate_vps".parse::<Metric>(), Ok(Metric::SlewRateVps));
    }

    #[test]
    fn slew_of_ramp() {
        let tr = TransientTrace {
            times_s: vec![0.0, 1.0, 2.0, 3.0],
            node_voltages: BTreeMap::from([("o".to_string(), vec![0.0, 2.0, 1.0, 1.5])]),
        };
        assert_eq!(slew_rate(&tr, "o"), Some(2.0));
        assert_eq!(slew_rate(&tr, "x"), None);
    }
}
