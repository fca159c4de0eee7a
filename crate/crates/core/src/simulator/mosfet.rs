//! Level-1 square-law MOSFET with channel-length modulation.

use serde::{Deserialize, Serialize};

/// Half-width of the quadratic blend applied to the overdrive near threshold.
pub const OVERDRIVE_BLEND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosKind {
    Nmos,
    Pmos,
}

impl MosKind {
    fn sign(self) -> f64 {
        match self {
            MosKind::Nmos => 1.0,
            MosKind::Pmos => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosModelCard {
    pub kind: MosKind,
    /// Threshold magnitude, V.
    pub vth: f64,
    /// Process transconductance mu*Cox, A/V^2.
    pub kprime: f64,
    /// Channel-length modulation, 1/V.
    #[serde(default)]
    pub lambda: f64,
    /// Gate oxide capacitance per area, F/m^2.
    #[serde(default)]
    pub cox_area: f64,
}

impl MosModelCard {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.vth.is_finite() && self.vth > 0.0) {
            return Err("vth must be positive".into());
        }
        if !(self.kprime.is_finite() && self.kprime > 0.0) {
            return Err("kprime must be positive".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err("lambda must be non-negative".into());
        }
        if !(self.cox_area.is_finite() && self.cox_area >= 0.0) {
            return Err("cox_area must be non-negative".into());
        }
        Ok(())
    }

    /// Gate-source capacitance used for small-signal and transient analysis.
    pub fn cgs(&self, w: f64, l: f64) -> f64 {
        2.0 / 3.0 * w * l * self.cox_area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Cutoff,
    Triode,
    Saturation,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Cutoff => "cutoff",
            Region::Triode => "triode",
            Region::Saturation => "saturation",
        }
    }
}

impl std::str::FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cutoff" => Ok(Region::Cutoff),
            "triode" | "linear" => Ok(Region::Triode),
            "saturation" | "sat" => Ok(Region::Saturation),
            other => Err(format!("unknown region '{other}'")),
        }
    }
}

/// NMOS-convention region test. PMOS callers pass mirrored (source-referenced) voltages.
pub fn classify_region(vgs: f64, vds: f64, vth_eff: f64) -> Region {
    if !(vgs >= vth_eff) {
        Region::Cutoff
    } else if vds >= vgs - vth_eff {
        Region::Saturation
    } else {
        Region::Triode
    }
}

/// Overdrive with a C1 quadratic blend on `[-b, b]` around zero; exact outside it.
fn smooth_overdrive(x: f64) -> (f64, f64) {
    let b = OVERDRIVE_BLEND;
    if x <= -b {
        (0.0, 0.0)
    } else if x >= b {
        (x, 1.0)
    } else {
        ((x + b) * (x + b) / (4.0 * b), (x + b) / (2.0 * b))
    }
}

/// Drain current for `vds >= 0` in NMOS convention, with d/dvgs and d/dvds.
fn forward(card: &MosModelCard, beta: f64, vgs: f64, vds: f64) -> (f64, f64, f64) {
    let (vov, dvov) = smooth_overdrive(vgs - card.vth);
    let clm = 1.0 + card.lambda * vds;
    if vds >= vov {
        let i = 0.5 * beta * vov * vov * clm;
        let gm = beta * vov * clm * dvov;
        let gds = 0.5 * beta * vov * vov * card.lambda;
        (i, gm, gds)
    } else {
        let core = vov * vds - 0.5 * vds * vds;
        let i = beta * core * clm;
        let gm = beta * vds * clm * dvov;
        let gds = beta * (vov - vds) * clm + beta * core * card.lambda;
        (i, gm, gds)
    }
}

/// Terminal current and conductances of one device at a bias point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosEval {
    /// Current flowing into the drain terminal and out of the source.
    pub ids: f64,
    pub d_vd: f64,
    pub d_vg: f64,
    pub d_vs: f64,
}

/// Evaluate the device at absolute terminal voltages. Drain and source swap
/// roles when the channel is reverse-biased; PMOS is evaluated mirrored.
pub fn evaluate(card: &MosModelCard, w: f64, l: f64, vd: f64, vg: f64, vs: f64) -> MosEval {
    let s = card.kind.sign();
    let (vd, vg, vs) = (s * vd, s * vg, s * vs);
    let beta = card.kprime * w / l;
    let (ids, d_vd, d_vg, d_vs) = if vd >= vs {
        let (i, gm, gds) = forward(card, beta, vg - vs, vd - vs);
        (i, gds, gm, -gm - gds)
    } else {
        let (i, gm, gds) = forward(card, beta, vg - vd, vs - vd);
        (-i, gm + gds, -gm, -gds)
    };
    MosEval { ids: s * ids, d_vd, d_vg, d_vs }
}

/// Drain current, gm and gds at an effective (forward, NMOS-convention) bias.
pub fn small_signal(card: &MosModelCard, w: f64, l: f64, vgs: f64, vds: f64) -> (f64, f64, f64) {
    forward(card, card.kprime * w / l, vgs, vds.max(0.0))
}

/// Bias quantities in the device's own convention: mirrored for PMOS and
/// with drain/source exchanged when reverse-biased.
pub fn effective_bias(card: &MosModelCard, vd: f64, vg: f64, vs: f64) -> (f64, f64) {
    let s = card.kind.sign();
    let (vd, vg, vs) = (s * vd, s * vg, s * vs);
    if vd >= vs {
        (vg - vs, vd - vs)
    } else {
        (vg - vd, vs - vd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nmos() -> MosModelCard {
        MosModelCard { kind: MosKind::Nmos, vth: 0.4, kprime: 200e-6, lambda: 0.1, cox_area: 0.01 }
    }

    #[test]
    fn region_examples() {
        assert_eq!(classify_region(0.3, 1.0, 0.4), Region::Cutoff);
        assert_eq!(classify_region(0.6, 0.5, 0.4), Region::Saturation);
        assert_eq!(classify_region(0.6, 0.1, 0.4), Region::Triode);
        assert_eq!(classify_region(f64::NAN, 0.1, 0.4), Region::Cutoff);
    }

    #[test]
    fn saturation_current_matches_square_law() {
        let c = nmos();
        let e = evaluate(&c, 10e-6, 1e-6, 1.0, 0.6, 0.0);
        let want = 0.5 * 200e-6 * 10.0 * 0.04 * (1.0 + 0.1);
        assert!((e.ids - want).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [MosKind::Nmos, MosKind::Pmos] {
            let c = MosModelCard { kind, ..nmos() };
            let s = if kind == MosKind::Nmos { 1.0 } else { -1.0 };
            for &(vd, vg, vs) in &[
                (1.0, 0.8, 0.0),
                (0.1, 0.9, 0.0),
                (0.0, 0.9, 0.2),
                (0.3, 0.4005, 0.0),
                (0.5, 0.7, 0.45),
            ] {
                let (vd, vg, vs) = (s * vd, s * vg, s * vs);
                let e = evaluate(&c, 5e-6, 1e-6, vd, vg, vs);
                let h = 1e-7;
                let fd = |dd: f64, dg: f64, ds: f64| {
                    (evaluate(&c, 5e-6, 1e-6, vd + dd, vg + dg, vs + ds).ids
                        - evaluate(&c, 5e-6, 1e-6, vd - dd, vg - dg, vs - ds).ids)
                        / (2.0 * h)
                };
                let tol = 1e-6 * (e.d_vd.abs() + e.d_vg.abs()) + 1e-12;
                assert!((fd(h, 0.0, 0.0) - e.d_vd).abs() < tol, "{kind:?} d_vd at {vd},{vg},{vs}");
                assert!((fd(0.0, h, 0.0) - e.d_vg).abs() < tol, "{kind:?} d_vg at {vd},{vg},{vs}");
                assert!((fd(0.0, 0.0, h) - e.d_vs).abs() < tol, "{kind:?} d_vs at {vd},{vg},{vs}");
            }
        }
    }

    #[test]
    fn pmos_current_flows_source_to_drain() {
        let c = MosModelCard { kind: MosKind::Pmos, ..nmos() };
        let e = evaluate(&c, 10e-6, 1e-6, 0.0, 0.4, 1.0);
        assert!(e.ids < 0.0);
    }

    #[test]
    fn blend_is_exact_away_from_threshold() {
        assert_eq!(smooth_overdrive(0.2), (0.2, 1.0));
        assert_eq!(smooth_overdrive(-0.2), (0.0, 0.0));
        let (v, d) = smooth_overdrive(0.0);
        assert!((v - OVERDRIVE_BLEND / 4.0).abs() < 1e-18 && (d - 0.5).abs() < 1e-12);
    }
}
