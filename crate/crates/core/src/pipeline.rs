//! The simulation tools agents call: a fast operating-point check (`dc_sim`)
//! and a full characterization (`full_sim`) that yields metrics and FoM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{evaluate, extract_metrics, slew_rate, validate_specs, Metric, MetricReport, MetricValues, Spec};
use crate::netlist::{bind_parameters, Circuit, MatchingGroup, ParameterSpace, Point, Slot, Value};
use crate::simulator::{
    solve_ac, solve_dc, solve_transient, AcGrid, DcOptions, DcSolution, ModelSet, Region, Stimulus,
};

/// Large-signal step testbench for slew rate. The circuit shares the sizing
/// placeholders of the main netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct SlewBench {
    pub circuit: Circuit,
    pub source: String,
    pub v_low: f64,
    pub v_high: f64,
    pub t_stop: f64,
    pub dt: f64,
    pub output_net: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub input_source: String,
    pub output_net: String,
    pub grid: AcGrid,
    pub slew: Option<SlewBench>,
}

/// Desired operating region per transistor.
pub type DcGoals = BTreeMap<String, Region>;

/// Everything needed to score a sizing.
#[derive(Debug, Clone)]
pub struct Problem {
    pub circuit: Circuit,
    pub models: ModelSet,
    pub space: ParameterSpace,
    pub matching: Vec<MatchingGroup>,
    pub specs: Vec<Spec>,
    pub analysis: Analysis,
    pub dc_options: DcOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMismatch {
    pub device: String,
    pub want: Region,
    /// `None` when the device has no operating point (simulation failed).
    pub got: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcOutcome {
    pub point: Point,
    pub solution: Option<DcSolution>,
    pub error: Option<String>,
}

impl DcOutcome {
    pub fn mismatches(&self, goals: &DcGoals) -> Vec<RegionMismatch> {
        goals
            .iter()
            .filter_map(|(dev, want)| {
                let got = self.solution.as_ref().and_then(|s| s.transistor_ops.get(dev)).map(|op| op.region);
                (got != Some(*want)).then(|| RegionMismatch { device: dev.clone(), want: *want, got })
            })
            .collect()
    }

    pub fn goals_met(&self, goals: &DcGoals) -> bool {
        self.solution.is_some() && self.mismatches(goals).is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullOutcome {
    pub point: Point,
    pub dc: Option<DcSolution>,
    pub report: MetricReport,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FullOutcome {
    pub fn fom(&self) -> f64 {
        self.report.fom
    }
}

impl Problem {
    /// Cross-check circuit, space, matching and specs.
    pub fn validate(&self) -> Result<(), String> {
        self.space.check_against(&self.circuit).map_err(|e| e.to_string())?;
        if let Some(s) = &self.analysis.slew {
            self.space.check_against(&s.circuit).map_err(|e| format!("slew bench: {e}"))?;
            if s.circuit.device(&s.source).is_none() {
                return Err(format!("slew bench: unknown source '{}'", s.source));
            }
            if !s.circuit.nets.contains(&s.output_net) {
                return Err(format!("slew bench: unknown net '{}'", s.output_net));
            }
            if !(s.dt > 0.0 && s.t_stop >= s.dt) {
                return Err("slew bench: need dt > 0 and t_stop >= dt".into());
            }
        }
        self.space.validate_groups(&self.matching).map_err(|e| e.to_string())?;
        validate_specs(&self.specs).map_err(|e| e.to_string())?;
        for card in self.models.values() {
            card.validate()?;
        }
        if self.circuit.device(&self.analysis.input_source).is_none() {
            return Err(format!("unknown input source '{}'", self.analysis.input_source));
        }
        if !self.circuit.nets.contains(&self.analysis.output_net) {
            return Err(format!("unknown output net '{}'", self.analysis.output_net));
        }
        Ok(())
    }

    fn bind(&self, circuit: &Circuit, point: &Point) -> Result<Circuit, String> {
        bind_parameters(circuit, &self.space, point).map_err(|e| e.to_string())
    }

    pub fn dc_sim(&self, point: &Point) -> DcOutcome {
        let result = self
            .bind(&self.circuit, point)
            .and_then(|c| solve_dc(&c, &self.models, &self.dc_options).map_err(|e| e.to_string()));
        match result {
            Ok(sol) => DcOutcome { point: point.clone(), solution: Some(sol), error: None },
            Err(e) => DcOutcome { point: point.clone(), solution: None, error: Some(e) },
        }
    }

    pub fn full_sim(&self, point: &Point) -> FullOutcome {
        let fail = |dc: Option<DcSolution>, e: String| FullOutcome {
            point: point.clone(),
            dc,
            report: evaluate(MetricValues::new(), &self.specs),
            error: Some(e),
            warnings: Vec::new(),
        };
        let bound = match self.bind(&self.circuit, point) {
            Ok(c) => c,
            Err(e) => return fail(None, e),
        };
        let dc = match solve_dc(&bound, &self.models, &self.dc_options) {
            Ok(dc) => dc,
            Err(e) => return fail(None, e.to_string()),
        };
        let a = &self.analysis;
        let ac = match solve_ac(&bound, &self.models, &dc, &a.input_source, &a.output_net, &a.grid) {
            Ok(ac) => ac,
            Err(e) => return fail(Some(dc), e.to_string()),
        };
        let mut values = extract_metrics(&ac, &dc, None);
        let mut warnings = Vec::new();
        if let Some(bench) = &a.slew {
            match self.slew(bench, point) {
                Ok(sr) => {
                    values.insert(Metric::SlewRateVps, sr);
                }
                Err(e) => warnings.push(format!("slew rate unmeasured: {e}")),
            }
        }
        FullOutcome { point: point.clone(), dc: Some(dc), report: evaluate(values, &self.specs), error: None, warnings }
    }

    fn slew(&self, bench: &SlewBench, point: &Point) -> Result<f64, String> {
        let mut c = self.bind(&bench.circuit, point)?;
        let src = c
            .devices
            .iter_mut()
            .find(|d| d.id.eq_ignore_ascii_case(&bench.source))
            .ok_or_else(|| format!("unknown source '{}'", bench.source))?;
        src.values.insert(Slot::Dc, Value::Num(bench.v_low));
        let dc = solve_dc(&c, &self.models, &self.dc_options).map_err(|e| e.to_string())?;
        let stim = Stimulus { source: bench.source.clone(), points: vec![(0.0, bench.v_low), (bench.dt, bench.v_high)] };
        let tr = solve_transient(&c, &self.models, &dc, &stim, bench.t_stop, bench.dt, &[bench.output_net.as_str()])
            .map_err(|e| e.to_string())?;
        slew_rate(&tr, &bench.output_net).ok_or_else(|| "empty waveform".into())
    }

    /// `full_sim` shaped as an optimizer objective.
    pub fn objective(&self) -> impl Fn(&Point) -> (f64, FullOutcome) + Sync + '_ {
        move |p| {
            let out = self.full_sim(p);
            (out.fom(), out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Spec;
    use crate::testbench;

    #[test]
    fn two_stage_initial_point_measures_sane_metrics() {
        let p = testbench::two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)]);
        p.validate().unwrap();
        let out = p.full_sim(&testbench::two_stage_initial_point());
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        let v = &out.report.values;
        assert!(v[&Metric::GainDb] > 40.0, "{v:?}");
        assert!(v[&Metric::UgbwHz] > 1e6, "{v:?}");
        assert!(v[&Metric::PhaseMarginDeg] > 0.0 && v[&Metric::PhaseMarginDeg] < 180.0, "{v:?}");
        assert!(v[&Metric::PowerW] > 1e-4 && v[&Metric::PowerW] < 1e-3, "{v:?}");
        assert!(v[&Metric::SlewRateVps] > 1e6, "{v:?}");
    }

    #[test]
    fn dc_goals_compare_regions() {
        let p = testbench::two_stage_problem(vec![]);
        let out = p.dc_sim(&testbench::two_stage_initial_point());
        let mut goals: DcGoals = out.solution.as_ref().unwrap().transistor_ops.keys().map(|k| (k.clone(), Region::Saturation)).collect();
        assert!(out.goals_met(&goals));
        goals.insert("M1".into(), Region::Triode);
        let mm = out.mismatches(&goals);
        assert_eq!(mm, vec![RegionMismatch { device: "M1".into(), want: Region::Triode, got: Some(Region::Saturation) }]);
    }

    #[test]
    fn out_of_range_point_fails_softly() {
        let p = testbench::two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)]);
        let mut pt = testbench::two_stage_initial_point();
        pt.insert("W1".into(), 1.0);
        let out = p.full_sim(&pt);
        assert_eq!(out.fom(), 0.0);
        assert!(out.error.unwrap().contains("W1"));
        assert!(p.dc_sim(&pt).error.is_some());
    }
}
