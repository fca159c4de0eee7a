//! Modified nodal analysis: unknown layout and residual/Jacobian assembly.
//!
//! Unknowns are the voltages of every non-ground net (sorted by name)
//! followed by one branch current per voltage source. Residual rows for
//! nodes are the sum of currents leaving the node; voltage-source rows are
//! `v(n+) - v(n-) - V`.

use std::collections::BTreeMap;

use super::linalg::Dense;
use super::mosfet::{self, MosModelCard};
use super::SimError;
use crate::netlist::{Circuit, DeviceKind, Slot, GROUND};

pub(crate) type Node = Option<usize>;

#[derive(Debug, Clone)]
pub(crate) enum Elem {
    Conductance { a: Node, b: Node, g: f64 },
    Capacitor { a: Node, b: Node, c: f64 },
    VSource { p: Node, n: Node, branch: usize, dc: f64, ac: f64 },
    ISource { p: Node, n: Node, dc: f64, ac: f64 },
    Mosfet { d: Node, g: Node, s: Node, card: MosModelCard, w: f64, l: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct Mna {
    pub nets: Vec<String>,
    pub n_nodes: usize,
    pub elems: Vec<Elem>,
    /// Device id for each element, parallel to `elems` (Cgs capacitors reuse the MOSFET id).
    pub ids: Vec<String>,
}

/// Conditions for one residual evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LoadCtx<'a> {
    pub source_scale: f64,
    pub gmin: f64,
    /// Backward-Euler companion: previous solution and step.
    pub companion: Option<(&'a [f64], f64)>,
    /// Replace the DC value of element `.0` with `.1`.
    pub source_override: Option<(usize, f64)>,
}

impl Default for LoadCtx<'_> {
    fn default() -> Self {
        Self { source_scale: 1.0, gmin: 0.0, companion: None, source_override: None }
    }
}

impl Mna {
    pub fn build(c: &Circuit, models: &BTreeMap<String, MosModelCard>) -> Result<Self, SimError> {
        let nets: Vec<String> = c.nets.iter().filter(|n| n.as_str() != GROUND).cloned().collect();
        let index: BTreeMap<&str, usize> =
            nets.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let node = |name: &str| -> Node { index.get(name).copied() };
        let n_nodes = nets.len();
        let mut elems = Vec::new();
        let mut ids = Vec::new();
        let mut branch = n_nodes;
        for d in &c.devices {
            let num = |slot: Slot| -> Result<f64, SimError> {
                d.num(slot).ok_or_else(|| SimError::Unbound { device: d.id.clone(), slot: slot.as_str() })
            };
            let t = &d.terminals;
            match d.kind {
                DeviceKind::Resistor => {
                    elems.push(Elem::Conductance { a: node(&t[0]), b: node(&t[1]), g: 1.0 / num(Slot::R)? });
                }
                DeviceKind::Capacitor => {
                    elems.push(Elem::Capacitor { a: node(&t[0]), b: node(&t[1]), c: num(Slot::C)? });
                }
                DeviceKind::VSource => {
                    elems.push(Elem::VSource {
                        p: node(&t[0]),
                        n: node(&t[1]),
                        branch,
                        dc: num(Slot::Dc)?,
                        ac: d.num(Slot::Ac).unwrap_or(0.0),
                    });
                    branch += 1;
                }
                DeviceKind::ISource => {
                    elems.push(Elem::ISource {
                        p: node(&t[0]),
                        n: node(&t[1]),
                        dc: num(Slot::Dc)?,
                        ac: d.num(Slot::Ac).unwrap_or(0.0),
                    });
                }
                DeviceKind::Mosfet => {
                    let model = d.model.clone().unwrap_or_default();
                    let card = models
                        .get(&model)
                        .or_else(|| models.iter().find(|(k, _)| k.eq_ignore_ascii_case(&model)).map(|(_, v)| v))
                        .ok_or_else(|| SimError::UnknownModel { device: d.id.clone(), model: model.clone() })?
                        .clone();
                    let (w, l) = (num(Slot::W)?, num(Slot::L)?);
                    let cgs = card.cgs(w, l);
                    let (dn, gn, sn) = (node(&t[0]), node(&t[1]), node(&t[2]));
                    elems.push(Elem::Mosfet { d: dn, g: gn, s: sn, card, w, l });
                    if cgs > 0.0 {
                        elems.push(Elem::Capacitor { a: gn, b: sn, c: cgs });
                    }
                }
            }
            // one id per element pushed for this device
            while ids.len() < elems.len() {
                ids.push(d.id.clone());
            }
        }
        Ok(Self { nets, n_nodes, elems, ids })
    }

    /// First node with no DC path to ground through resistors, voltage
    /// sources or MOSFET channels.
    pub fn floating_node(&self) -> Option<usize> {
        let ground = self.n_nodes;
        let mut parent: Vec<usize> = (0..=ground).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.elems {
            let (a, b) = match e {
                Elem::Conductance { a, b, .. } => (a, b),
                Elem::VSource { p, n, .. } => (p, n),
                Elem::Mosfet { d, s, .. } => (d, s),
                _ => continue,
            };
            let ra = find(&mut parent, a.unwrap_or(ground));
            let rb = find(&mut parent, b.unwrap_or(ground));
            parent[ra] = rb;
        }
        let root = find(&mut parent, ground);
        (0..self.n_nodes).find(|&i| find(&mut parent, i) != root)
    }

    pub fn size(&self) -> usize {
        self.n_nodes
            + self.elems.iter().filter(|e| matches!(e, Elem::VSource { .. })).count()
    }

    pub fn element_index(&self, id: &str) -> Option<usize> {
        self.ids.iter().zip(&self.elems).position(|(i, e)| {
            i.eq_ignore_ascii_case(id) && matches!(e, Elem::VSource { .. } | Elem::ISource { .. })
        })
    }

    /// Assemble the Jacobian and the residual at `x`.
    pub fn load(&self, x: &[f64], ctx: &LoadCtx, jac: &mut Dense<f64>, f: &mut [f64]) {
        jac.clear();
        f.iter_mut().for_each(|v| *v = 0.0);
        let v = |n: Node| n.map_or(0.0, |i| x[i]);

        for (idx, e) in self.elems.iter().enumerate() {
            match *e {
                Elem::Conductance { a, b, g } => {
                    let i = g * (v(a) - v(b));
                    stamp_current(f, a, b, i);
                    stamp_g(jac, a, b, g);
                }
                Elem::Capacitor { a, b, c } => {
                    if let Some((prev, dt)) = ctx.companion {
                        let g = c / dt;
                        let vp = |n: Node| n.map_or(0.0, |i| prev[i]);
                        let i = g * ((v(a) - v(b)) - (vp(a) - vp(b)));
                        stamp_current(f, a, b, i);
                        stamp_g(jac, a, b, g);
                    }
                }
                Elem::VSource { p, n, branch, dc, .. } => {
                    let value = match ctx.source_override {
                        Some((k, val)) if k == idx => val,
                        _ => dc * ctx.source_scale,
                    };
                    let ib = x[branch];
                    stamp_current(f, p, n, ib);
                    f[branch] = v(p) - v(n) - value;
                    if let Some(p) = p {
                        jac.add(p, branch, 1.0);
                        jac.add(branch, p, 1.0);
                    }
                    if let Some(n) = n {
                        jac.add(n, branch, -1.0);
                        jac.add(branch, n, -1.0);
                    }
                }
                Elem::ISource { p, n, dc, .. } => {
                    let value = match ctx.source_override {
                        Some((k, val)) if k == idx => val,
                        _ => dc * ctx.source_scale,
                    };
                    stamp_current(f, p, n, value);
                }
                Elem::Mosfet { d, g, s, ref card, w, l } => {
                    let m = mosfet::evaluate(card, w, l, v(d), v(g), v(s));
                    stamp_current(f, d, s, m.ids);
                    for (row, sign) in [(d, 1.0), (s, -1.0)] {
                        let Some(r) = row else { continue };
                        for (col, dv) in [(d, m.d_vd), (g, m.d_vg), (s, m.d_vs)] {
                            if let Some(c) = col {
                                jac.add(r, c, sign * dv);
                            }
                        }
                    }
                }
            }
        }
        if ctx.gmin > 0.0 {
            for i in 0..self.n_nodes {
                f[i] += ctx.gmin * x[i];
                jac.add(i, i, ctx.gmin);
            }
        }
    }

    /// Capacitance matrix (node rows only) for small-signal analysis.
    pub fn capacitance(&self) -> Vec<(Node, Node, f64)> {
        self.elems
            .iter()
            .filter_map(|e| match *e {
                Elem::Capacitor { a, b, c } => Some((a, b, c)),
                _ => None,
            })
            .collect()
    }
}

/// Current `i` flowing from node `a` to node `b` through an element.
#[inline]
fn stamp_current(f: &mut [f64], a: Node, b: Node, i: f64) {
    if let Some(a) = a {
        f[a] += i;
    }
    if let Some(b) = b {
        f[b] -= i;
    }
}

#[inline]
pub(crate) fn stamp_g<T: super::linalg::Scalar>(jac: &mut Dense<T>, a: Node, b: Node, g: T) {
    if let Some(a) = a {
        jac.add(a, a, g);
    }
    if let Some(b) = b {
        jac.add(b, b, g);
    }
    if let (Some(a), Some(b)) = (a, b) {
        jac.add(a, b, -g);
        jac.add(b, a, -g);
    }
}
