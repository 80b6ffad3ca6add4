//! Grid data as read from a grid-spec file.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::GridError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridModel {
    /// Multi-period dispatch QP.
    Ded,
    /// Single-period branch-flow SOCP on a radial network.
    OpfRadial,
    /// Full AC model. Nonconvex, so it is rejected at validation.
    Meshed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub gs: f64,
    #[serde(default)]
    pub bs: f64,
    /// Voltage magnitude bounds (not squared).
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_min() -> f64 {
    0.9
}

fn default_v_max() -> f64 {
    1.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub a1: f64,
    #[serde(default)]
    pub a2: f64,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default)]
    pub q_min: f64,
    #[serde(default)]
    pub q_max: f64,
    /// Ramp rates per unit time; absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_down: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub bus: u32,
    /// Active demand per period.
    pub p: Vec<f64>,
    /// Reactive demand per period; empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub x: f64,
    /// Active-flow capacity for dispatch models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    /// Apparent-power capacity for branch-flow models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    /// Squared-current capacity for branch-flow models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<f64>,
    /// Distribution factors keyed by generator, load or port name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ptdf: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reserves {
    #[serde(default)]
    pub up: Vec<f64>,
    #[serde(default)]
    pub down: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortRole {
    /// Connection to the parent grid.
    Upper,
    /// Connection to a child grid.
    Lower,
}

/// Coupled quantity. `V` is the squared voltage magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    P,
    Q,
    V,
}

/// A virtual generator standing in for an adjacent grid. Its variables carry the
/// exchange from parent to child, so both sides see the same sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub bus: u32,
    pub role: PortRole,
    /// Empty means the model's default: `[p]` for dispatch, `[p, q, v]` for branch flow.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quantities: Vec<Quantity>,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub model: GridModel,
    #[serde(default = "one")]
    pub periods: usize,
    /// Dispatch interval.
    #[serde(default = "one_f")]
    pub dt: f64,
    /// Root of a radial network without an upper port.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_bus: Option<u32>,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserves: Option<Reserves>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ports: Vec<Port>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl GridSpec {
    /// `(buses, generators, loads)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.buses.len(), self.generators.len(), self.loads.len())
    }

    pub fn upper_port(&self) -> Option<&Port> {
        self.ports.iter().find(|p| p.role == PortRole::Upper)
    }

    pub fn lower_ports(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.role == PortRole::Lower)
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn port_quantities(&self, port: &Port) -> Vec<Quantity> {
        if !port.quantities.is_empty() {
            return port.quantities.clone();
        }
        match self.model {
            GridModel::Ded => vec![Quantity::P],
            _ => vec![Quantity::P, Quantity::Q, Quantity::V],
        }
    }

    /// Boundary coordinates of a port: one per period for dispatch, one per quantity
    /// for branch flow.
    pub fn port_dim(&self, port: &Port) -> usize {
        match self.model {
            GridModel::Ded => self.periods,
            _ => self.port_quantities(port).len(),
        }
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let grid = || self.name.clone();
        if self.model == GridModel::Meshed {
            return Err(GridError::MeshedModel(grid()));
        }
        if self.periods == 0 {
            return Err(GridError::Invalid { grid: grid(), what: "periods must be at least 1".into() });
        }
        if !(self.dt > 0.0) {
            return Err(GridError::Invalid { grid: grid(), what: format!("dt must be positive, got {}", self.dt) });
        }
        if self.model == GridModel::OpfRadial && self.periods != 1 {
            return Err(GridError::Invalid { grid: grid(), what: "branch-flow models have exactly one period".into() });
        }

        let mut bus_ids = HashSet::new();
        for b in &self.buses {
            if !bus_ids.insert(b.id) {
                return Err(GridError::DuplicateId { grid: grid(), kind: "bus", id: b.id.to_string() });
            }
            if !(b.v_min <= b.v_max) || b.v_min < 0.0 {
                return Err(GridError::InvalidBounds { grid: grid(), kind: "bus", id: b.id.to_string() });
            }
        }
        let check_bus = |kind: &'static str, id: &str, bus: u32| {
            if bus_ids.contains(&bus) {
                Ok(())
            } else {
                Err(GridError::DanglingBus { grid: grid(), kind, id: id.to_string(), bus })
            }
        };

        let mut names = HashSet::new();
        let mut unique = |kind: &'static str, id: &str| {
            if names.insert(id.to_string()) {
                Ok(())
            } else {
                Err(GridError::DuplicateId { grid: grid(), kind, id: id.to_string() })
            }
        };
        for g in &self.generators {
            unique("generator", &g.id)?;
            check_bus("generator", &g.id, g.bus)?;
            if !(g.a2 >= 0.0) {
                return Err(GridError::ConvexityViolation { grid: grid(), generator: g.id.clone(), a2: g.a2 });
            }
            if !(g.p_min <= g.p_max) || !(g.q_min <= g.q_max) {
                return Err(GridError::InvalidBounds { grid: grid(), kind: "generator", id: g.id.clone() });
            }
            if g.ramp_up.is_some_and(|r| !(r >= 0.0)) || g.ramp_down.is_some_and(|r| !(r >= 0.0)) {
                return Err(GridError::InvalidBounds { grid: grid(), kind: "generator ramp", id: g.id.clone() });
            }
        }
        for l in &self.loads {
            unique("load", &l.id)?;
            check_bus("load", &l.id, l.bus)?;
            self.check_series("load p", &l.id, &l.p, false)?;
            self.check_series("load q", &l.id, &l.q, true)?;
        }
        for p in &self.ports {
            unique("port", &p.name)?;
            check_bus("port", &p.name, p.bus)?;
            if !(p.p_min <= p.p_max) {
                return Err(GridError::InvalidBounds { grid: grid(), kind: "port", id: p.name.clone() });
            }
            if let (Some(lo), Some(hi)) = (p.q_min, p.q_max) {
                if !(lo <= hi) {
                    return Err(GridError::InvalidBounds { grid: grid(), kind: "port", id: p.name.clone() });
                }
            }
            let q = self.port_quantities(p);
            let distinct: HashSet<_> = q.iter().collect();
            if distinct.len() != q.len() || (self.model == GridModel::Ded && q != [Quantity::P]) {
                return Err(GridError::Invalid { grid: grid(), what: format!("port {} has unsupported quantities {q:?}", p.name) });
            }
        }
        if self.ports.iter().filter(|p| p.role == PortRole::Upper).count() > 1 {
            return Err(GridError::Invalid { grid: grid(), what: "more than one upper port".into() });
        }
        let mut line_ids = HashSet::new();
        for l in &self.lines {
            if !line_ids.insert(l.id.clone()) {
                return Err(GridError::DuplicateId { grid: grid(), kind: "line", id: l.id.clone() });
            }
            check_bus("line", &l.id, l.from)?;
            check_bus("line", &l.id, l.to)?;
            if !(l.r >= 0.0) {
                return Err(GridError::InvalidBounds { grid: grid(), kind: "line resistance", id: l.id.clone() });
            }
            for cap in [l.p_max, l.s_max, l.l_max].into_iter().flatten() {
                if !(cap >= 0.0) {
                    return Err(GridError::InvalidBounds { grid: grid(), kind: "line capacity", id: l.id.clone() });
                }
            }
            for key in l.ptdf.keys() {
                if !names.contains(key) {
                    return Err(GridError::Invalid {
                        grid: grid(),
                        what: format!("line {} has a distribution factor for unknown injection {key}", l.id),
                    });
                }
            }
        }
        if let Some(r) = &self.reserves {
            self.check_series("reserve up", "reserves", &r.up, true)?;
            self.check_series("reserve down", "reserves", &r.down, true)?;
        }
        if let Some(s) = self.slack_bus {
            check_bus("slack", "slack_bus", s)?;
        }
        Ok(())
    }

    fn check_series(&self, what: &'static str, id: &str, v: &[f64], may_be_empty: bool) -> Result<(), GridError> {
        if (v.is_empty() && may_be_empty) || v.len() == self.periods {
            if v.iter().all(|x| x.is_finite()) {
                return Ok(());
            }
        }
        Err(GridError::SeriesLength { grid: self.name.clone(), what, id: id.to_string(), expected: self.periods, found: v.len() })
    }
}
