//! Device-level circuit IR for a flat SPICE subset.
//!
//! The accepted grammar is deliberately small:
//!
//! ```text
//! <title line>
//! * comment
//! Mxx d g s b <model> W=<value> L=<value>
//! Rxx n+ n- <value>
//! Cxx n+ n- <value>
//! Vxx n+ n- [DC] <value> [AC <mag>]
//! Ixx n+ n- [DC] <value> [AC <mag>]
//! + continuation of the previous line
//! .end
//! ```
//!
//! Values are numbers with an optional SI suffix (`f p n u m k meg g t`,
//! case-insensitive, `m` is milli) or `{name}` placeholders that are filled
//! in later by [`bind_parameters`].

mod params;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{
    apply_matching, bind_parameters, BindError, MatchKind, MatchingGroup, ParamEntry,
    ParameterSpace, Point, Scale, SpaceError, substitute_parameters,
};
pub use parser::{parse_netlist, parse_si_value};

/// Name of the ground net.
pub const GROUND: &str = "0";

/// Longest accepted physical line.
pub const MAX_LINE_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistError {
    #[error("empty netlist")]
    Empty,
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown device prefix '{prefix}'")]
    UnknownDevice { line: usize, prefix: char },
    #[error("line {line}: duplicate device id '{id}'")]
    DuplicateDevice { line: usize, id: String },
    #[error("missing ground net \"0\"")]
    MissingGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    Mosfet,
    Resistor,
    Capacitor,
    VSource,
    ISource,
}

impl DeviceKind {
    pub fn from_prefix(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'M' => Some(Self::Mosfet),
            'R' => Some(Self::Resistor),
            'C' => Some(Self::Capacitor),
            'V' => Some(Self::VSource),
            'I' => Some(Self::ISource),
            _ => None,
        }
    }

    pub fn terminal_count(self) -> usize {
        match self {
            Self::Mosfet => 4,
            _ => 2,
        }
    }
}

/// Value slot of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    W,
    L,
    R,
    C,
    Dc,
    Ac,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::W => "W",
            Slot::L => "L",
            Slot::R => "R",
            Slot::C => "C",
            Slot::Dc => "DC",
            Slot::Ac => "AC",
        }
    }

    /// Slots that must hold strictly positive literals.
    pub fn requires_positive(self) -> bool {
        matches!(self, Slot::W | Slot::L | Slot::R | Slot::C)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Param(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Param(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v:e}"),
            Value::Param(name) => write!(f, "{{{name}}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub kind: DeviceKind,
    /// MOSFET order is drain, gate, source, bulk; two-terminal devices are n+, n-.
    pub terminals: Vec<String>,
    /// Model name; only set for MOSFETs.
    pub model: Option<String>,
    pub values: BTreeMap<Slot, Value>,
}

impl Device {
    pub fn value(&self, slot: Slot) -> Option<&Value> {
        self.values.get(&slot)
    }

    /// Numeric value of a slot; `None` when absent or still a placeholder.
    pub fn num(&self, slot: Slot) -> Option<f64> {
        self.values.get(&slot).and_then(Value::as_num)
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.values.values().filter_map(|v| match v {
            Value::Param(name) => Some(name.as_str()),
            Value::Num(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub title: String,
    pub devices: Vec<Device>,
    pub nets: BTreeSet<String>,
    /// Placeholder names in order of first appearance.
    pub params: Vec<String>,
}

impl Circuit {
    pub fn device(&self, id: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.id.eq_ignore_ascii_case(id))
    }

    pub fn mosfets(&self) -> impl Iterator<Item = &Device> {
        self.devices.iter().filter(|d| d.kind == DeviceKind::Mosfet)
    }

    pub fn is_numeric(&self) -> bool {
        self.devices.iter().all(|d| d.placeholders().next().is_none())
    }

    /// Rebuild `nets` and `params` from the device list.
    pub fn reindex(&mut self) {
        self.nets = self
            .devices
            .iter()
            .flat_map(|d| d.terminals.iter().cloned())
            .collect();
        let mut seen = BTreeSet::new();
        self.params = self
            .devices
            .iter()
            .flat_map(|d| d.placeholders().map(str::to_string).collect::<Vec<_>>())
            .filter(|p| seen.insert(p.clone()))
            .collect();
    }
}

/// Render a circuit back to netlist text that [`parse_netlist`] accepts.
pub fn serialize_netlist(c: &Circuit) -> String {
    let mut out = String::new();
    out.push_str(&c.title);
    out.push('\n');
    for d in &c.devices {
        out.push_str(&d.id);
        for t in &d.terminals {
            out.push(' ');
            out.push_str(t);
        }
        match d.kind {
            DeviceKind::Mosfet => {
                if let Some(model) = &d.model {
                    out.push(' ');
                    out.push_str(model);
                }
                for slot in [Slot::W, Slot::L] {
                    if let Some(v) = d.value(slot) {
                        out.push_str(&format!(" {}={}", slot.as_str(), v));
                    }
                }
            }
            DeviceKind::Resistor | DeviceKind::Capacitor => {
                let slot = if d.kind == DeviceKind::Resistor { Slot::R } else { Slot::C };
                if let Some(v) = d.value(slot) {
                    out.push_str(&format!(" {v}"));
                }
            }
            DeviceKind::VSource | DeviceKind::ISource => {
                if let Some(v) = d.value(Slot::Dc) {
                    out.push_str(&format!(" DC {v}"));
                }
                if let Some(v) = d.value(Slot::Ac) {
                    out.push_str(&format!(" AC {v}"));
                }
            }
        }
        out.push('\n');
    }
    out.push_str(".end\n");
    out
}
