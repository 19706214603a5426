//! Radial feeder data model and the network document format.
//!
//! A [`Network`] is immutable once validated. Validation checks radiality
//! (branch count = bus count - 1, no cycles), connectivity from the slack bus,
//! and unique ids, then caches the sweep ordering used by the solver.

pub mod solver;

use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use solver::{
    solve_power_flow, solve_power_flow_with, PowerFlowError, SolverOptions, VoltageSolution,
};

/// Feeder bundled with the crate: the public 141-bus Caracas test feeder with
/// 22 PV units and 5 shunt capacitors placed by a fixed seed
/// (see `tools/build_feeder141.py`).
pub const FEEDER_141_JSON: &str = include_str!("../../data/feeder141.json");

pub const DEFAULT_BASE_MVA: f64 = 10.0;

pub type BusId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network is not radial: {0}")]
    NonRadial(String),
    #[error("network is disconnected: bus {0} unreachable from the slack bus")]
    Disconnected(BusId),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(BusId),
    #[error("network has no slack bus")]
    MissingSlack,
    #[error("network has more than one slack bus ({0} and {1})")]
    MultipleSlack(BusId, BusId),
    #[error("branch references unknown bus {0}")]
    UnknownBus(BusId),
    #[error("self-loop branch at bus {0}")]
    SelfLoop(BusId),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed network document: {0}")]
    Parse(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

/// Shunt capacitor rating attached to a bus in the network document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScRating {
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Nominal peak active load, MW.
    pub p_load_nom: f64,
    /// Nominal peak reactive load, MVAr.
    pub q_load_nom: f64,
    /// Installed PV, MW. Zero when the bus has no PV.
    pub pv_capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sc: Option<ScRating>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    #[serde(rename = "from")]
    pub from_bus: BusId,
    #[serde(rename = "to")]
    pub to_bus: BusId,
    /// Series resistance, p.u.
    pub r: f64,
    /// Series reactance, p.u.
    pub x: f64,
}

/// On-disk shape of a network, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

/// A validated radial network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    doc: NetworkDocument,
    index: HashMap<BusId, usize>,
    slack: usize,
    /// Bus indices in breadth-first order from the slack bus.
    order: Vec<usize>,
    /// Parent bus index (towards the slack), `None` for the slack bus.
    parent: Vec<Option<usize>>,
    /// Impedance of the branch connecting each bus to its parent.
    upstream_z: Vec<Complex64>,
}

impl Network {
    pub fn from_document(doc: NetworkDocument) -> Result<Self, NetworkError> {
        if !(doc.base_mva.is_finite() && doc.base_mva > 0.0) {
            return Err(NetworkError::InvalidValue(format!(
                "base_mva must be positive, got {}",
                doc.base_mva
            )));
        }

        let mut index = HashMap::with_capacity(doc.buses.len());
        let mut slack: Option<usize> = None;
        for (i, bus) in doc.buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(NetworkError::DuplicateBusId(bus.id));
            }
            for (label, v) in [
                ("p_load_nom", bus.p_load_nom),
                ("q_load_nom", bus.q_load_nom),
                ("pv_capacity", bus.pv_capacity),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(NetworkError::InvalidValue(format!(
                        "bus {} {label} must be finite and >= 0, got {v}",
                        bus.id
                    )));
                }
            }
            if let Some(sc) = bus.sc {
                if !(sc.q_mvar.is_finite() && sc.q_mvar > 0.0) {
                    return Err(NetworkError::InvalidValue(format!(
                        "bus {} sc q_mvar must be positive, got {}",
                        bus.id, sc.q_mvar
                    )));
                }
            }
            if bus.kind == BusKind::Slack {
                if let Some(prev) = slack {
                    let prev_id = doc.buses[prev].id;
                    return Err(NetworkError::MultipleSlack(prev_id, bus.id));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(NetworkError::MissingSlack)?;

        let n = doc.buses.len();
        if doc.branches.len() + 1 != n {
            return Err(NetworkError::NonRadial(format!(
                "{} branches for {} buses (expected {})",
                doc.branches.len(),
                n,
                n - 1
            )));
        }

        let mut adjacency: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        for br in &doc.branches {
            if br.from_bus == br.to_bus {
                return Err(NetworkError::SelfLoop(br.from_bus));
            }
            let f = *index
                .get(&br.from_bus)
                .ok_or(NetworkError::UnknownBus(br.from_bus))?;
            let t = *index.get(&br.to_bus).ok_or(NetworkError::UnknownBus(br.to_bus))?;
            if !(br.r.is_finite() && br.x.is_finite() && br.r >= 0.0 && br.x >= 0.0)
                || (br.r == 0.0 && br.x == 0.0)
            {
                return Err(NetworkError::InvalidValue(format!(
                    "branch {}-{} impedance must be non-negative and non-zero (r={}, x={})",
                    br.from_bus, br.to_bus, br.r, br.x
                )));
            }
            let z = Complex64::new(br.r, br.x);
            adjacency[f].push((t, z));
            adjacency[t].push((f, z));
        }

        let mut parent = vec![None; n];
        let mut upstream_z = vec![Complex64::new(0.0, 0.0); n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        visited[slack] = true;
        order.push(slack);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            // Skip the link back to the parent once; a second copy is a cycle.
            let mut parent_link_seen = false;
            for &(v, z) in &adjacency[u] {
                if parent[u] == Some(v) && !parent_link_seen {
                    parent_link_seen = true;
                    continue;
                }
                if visited[v] {
                    return Err(NetworkError::NonRadial(format!(
                        "cycle through buses {} and {}",
                        doc.buses[u].id, doc.buses[v].id
                    )));
                }
                visited[v] = true;
                parent[v] = Some(u);
                upstream_z[v] = z;
                order.push(v);
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(NetworkError::Disconnected(doc.buses[i].id));
        }

        Ok(Self {
            doc,
            index,
            slack,
            order,
            parent,
            upstream_z,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let doc: NetworkDocument =
            serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Reads and validates a network document from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetworkError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// The bundled 141-bus feeder.
    pub fn feeder_141() -> Self {
        Self::from_json(FEEDER_141_JSON).expect("bundled feeder document is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("network document serializes")
    }

    pub fn document(&self) -> &NetworkDocument {
        &self.doc
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn base_mva(&self) -> f64 {
        self.doc.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.doc.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.doc.branches
    }

    pub fn bus_count(&self) -> usize {
        self.doc.buses.len()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn sweep_order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus]
    }

    pub(crate) fn upstream_impedance(&self, bus: usize) -> Complex64 {
        self.upstream_z[bus]
    }

    /// Ids of buses with installed PV, in document order.
    pub fn pv_buses(&self) -> Vec<BusId> {
        self.doc
            .buses
            .iter()
            .filter(|b| b.pv_capacity > 0.0)
            .map(|b| b.id)
            .collect()
    }

    /// Ids of buses carrying a shunt capacitor, in document order.
    pub fn sc_buses(&self) -> Vec<BusId> {
        self.doc
            .buses
            .iter()
            .filter(|b| b.sc.is_some())
            .map(|b| b.id)
            .collect()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.doc.buses.iter().map(|b| b.p_load_nom).sum()
    }

    pub fn total_pv_mw(&self) -> f64 {
        self.doc.buses.iter().map(|b| b.pv_capacity).sum()
    }
}

/// Per-bus net injections for one case, per-unit on the network base.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInjection {
    /// PV generation minus active load.
    pub p: Vec<f64>,
    /// Capacitor injection minus reactive load.
    pub q: Vec<f64>,
}

impl CaseInjection {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Active and reactive demand at one bus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BusLoad {
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// A switchable capacitor location and size, as consumed by
/// [`build_case_injection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorPlacement {
    pub bus: BusId,
    pub q_mvar: f64,
}

/// Converts physical bus quantities into per-unit net injections.
pub fn build_case_injection(
    net: &Network,
    bus_loads: &[BusLoad],
    bus_pv_mw: &[f64],
    sc_on: &[bool],
    capacitors: &[CapacitorPlacement],
) -> Result<CaseInjection, NetworkError> {
    let n = net.bus_count();
    if bus_loads.len() != n || bus_pv_mw.len() != n {
        return Err(NetworkError::DimensionMismatch(format!(
            "expected {n} bus entries, got {} loads and {} PV",
            bus_loads.len(),
            bus_pv_mw.len()
        )));
    }
    if sc_on.len() != capacitors.len() {
        return Err(NetworkError::DimensionMismatch(format!(
            "{} capacitor states for {} capacitors",
            sc_on.len(),
            capacitors.len()
        )));
    }
    let base = net.base_mva();
    let mut inj = CaseInjection::zeros(n);
    for i in 0..n {
        inj.p[i] = (bus_pv_mw[i] - bus_loads[i].p_mw) / base;
        inj.q[i] = -bus_loads[i].q_mvar / base;
    }
    for (cap, &on) in capacitors.iter().zip(sc_on) {
        let i = net.bus_index(cap.bus).ok_or(NetworkError::UnknownBus(cap.bus))?;
        if on {
            inj.q[i] += cap.q_mvar / base;
        }
    }
    Ok(inj)
}
