//! Radial distribution network case: schema, validation and topology.
//!
//! A case is a single JSON document with the top-level keys `bases`,
//! `buses`, `lines`, `loads`, `dgs`, `motor`, `protection_curves`,
//! `weights` and `scenario`. Unknown keys are rejected everywhere.
//! Everything except the motor's equivalent circuit is given in per-unit on
//! the system base; the motor may be given in ohms on its own nameplate base
//! and is converted once, at load time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motor::{MechLoad, MotorModel};
use crate::protection::{CurveKind, ProtectionCurve};

pub type BusId = u32;

/// Format tag written into every case and artifact produced by this crate.
pub const FORMAT_TAG: &str = "motorstart/1";

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, CaseError> {
    Err(CaseError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    pub s_base_va: f64,
    pub v_base_v: f64,
    /// Squared slack voltage magnitude [p.u.^2].
    #[serde(default = "one")]
    pub v_substation_sq: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    #[serde(default)]
    pub is_substation: bool,
    #[serde(default)]
    pub has_undervoltage_protection: bool,
    /// Membership in the off-outage area. Derived from the tie-switch when
    /// absent; an explicit value overrides the derivation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_off_outage_area: Option<bool>,
}

impl Bus {
    pub fn off_outage(&self) -> bool {
        self.in_off_outage_area.unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwitchState {
    Open,
    #[default]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Squared thermal current limit F_th [p.u.^2].
    pub ampacity_sq: f64,
    #[serde(default)]
    pub has_overcurrent_protection: bool,
    #[serde(default)]
    pub switch_state: SwitchState,
    /// A closed tie-switch feeds the off-outage area from a healthy feeder.
    #[serde(default)]
    pub is_tie_switch: bool,
}

impl Line {
    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("{}-{}", self.from, self.to),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    Static,
    MotorEnergized,
    MotorRestart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: BusId,
    #[serde(rename = "P0")]
    pub p0: f64,
    #[serde(rename = "Q0")]
    pub q0: f64,
    pub kind: LoadKind,
    #[serde(default = "two")]
    pub kp: f64,
    #[serde(default = "two")]
    pub kq: f64,
    #[serde(default = "one")]
    pub priority: f64,
    #[serde(default = "yes")]
    pub sheddable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgSpec {
    pub bus: BusId,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub s_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotorUnits {
    Ohm,
    Pu,
}

/// Restart motor data as written in the case document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSection {
    pub units: MotorUnits,
    /// Nameplate base used to convert ohmic parameters [VA].
    pub base_power_va: f64,
    /// Nameplate base voltage [V].
    pub base_voltage_v: f64,
    /// Rating at which the per-unit machine is placed in the network [VA].
    /// Defaults to `base_power_va`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_rating_va: Option<f64>,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    #[serde(rename = "X_ls")]
    pub x_ls: f64,
    #[serde(rename = "R_r")]
    pub r_r: f64,
    #[serde(rename = "X_lr")]
    pub x_lr: f64,
    #[serde(rename = "X_m")]
    pub x_m: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "K_D", default)]
    pub k_d: f64,
    pub mech_load: MechLoad,
}

impl MotorSection {
    pub fn base_impedance_ohm(&self) -> f64 {
        self.base_voltage_v * self.base_voltage_v / self.base_power_va
    }

    /// Equivalent circuit on the motor's own base.
    pub fn model(&self) -> MotorModel {
        let z = match self.units {
            MotorUnits::Ohm => self.base_impedance_ohm(),
            MotorUnits::Pu => 1.0,
        };
        MotorModel {
            r_s: self.r_s / z,
            x_ls: self.x_ls / z,
            r_r: self.r_r / z,
            x_lr: self.x_lr / z,
            x_m: self.x_m / z,
            h: self.h,
            k_d: self.k_d,
        }
    }

    pub fn rating_va(&self) -> f64 {
        self.network_rating_va.unwrap_or(self.base_power_va)
    }

    fn to_pu(&mut self) {
        let m = self.model();
        self.units = MotorUnits::Pu;
        self.r_s = m.r_s;
        self.x_ls = m.x_ls;
        self.r_r = m.r_r;
        self.x_lr = m.x_lr;
        self.x_m = m.x_m;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(default = "one")]
    pub w_re: f64,
    #[serde(default = "default_w_op")]
    pub w_op: f64,
}

fn default_w_op() -> f64 {
    1e-4
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_re: 1.0,
            w_op: default_w_op(),
        }
    }
}

/// Run settings that travel with the case; CLI flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_scenario_id")]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Number of slip steps K_max.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_breakpoints")]
    pub pwl_breakpoints: usize,
    #[serde(default)]
    pub per_step_dg: bool,
    /// Terminal slip override; derived from the torque balance when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_end: Option<f64>,
}

fn default_scenario_id() -> String {
    "default".into()
}
fn default_steps() -> usize {
    20
}
fn default_breakpoints() -> usize {
    6
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            id: default_scenario_id(),
            description: None,
            steps: default_steps(),
            pwl_breakpoints: default_breakpoints(),
            per_step_dg: false,
            s_end: None,
        }
    }
}

/// Validated, per-unit network case. Immutable after [`load_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default = "format_tag")]
    pub format: String,
    pub bases: Bases,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub dgs: Vec<DgSpec>,
    pub motor: MotorSection,
    #[serde(default)]
    pub protection_curves: Vec<ProtectionCurve>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub scenario: Scenario,
}

fn format_tag() -> String {
    FORMAT_TAG.into()
}

/// Parses, normalizes and validates a case document.
pub fn load_case(text: &str) -> Result<NetworkCase, CaseError> {
    let mut case: NetworkCase = serde_json::from_str(text).map_err(|e| CaseError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    case.normalize()?;
    case.validate()?;
    Ok(case)
}

pub fn load_case_file(path: &std::path::Path) -> Result<NetworkCase, CaseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CaseError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    load_case(&text)
}

impl NetworkCase {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    fn normalize(&mut self) -> Result<(), CaseError> {
        self.motor.to_pu();
        for kind in [CurveKind::Undervoltage, CurveKind::Overcurrent] {
            if !self.protection_curves.iter().any(|c| c.kind == kind) {
                self.protection_curves.push(ProtectionCurve::default_for(kind));
            }
        }
        // Topology checks must precede the off-outage derivation.
        self.check_topology()?;
        let derived = self.derive_off_outage()?;
        for (bus, d) in self.buses.iter_mut().zip(derived) {
            if bus.in_off_outage_area.is_none() {
                bus.in_off_outage_area = Some(d);
            }
        }
        Ok(())
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn substation(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.is_substation)
            .expect("validated case has a substation")
    }

    pub fn restart_motor(&self) -> &LoadSpec {
        self.loads
            .iter()
            .find(|l| l.kind == LoadKind::MotorRestart)
            .expect("validated case has a restart motor")
    }

    pub fn motor_bus(&self) -> usize {
        self.bus_index(self.restart_motor().bus).expect("motor bus exists")
    }

    pub fn motor_model(&self) -> MotorModel {
        self.motor.model()
    }

    /// Ratio converting motor-base power to system-base power.
    pub fn motor_power_scale(&self) -> f64 {
        self.motor.rating_va() / self.bases.s_base_va
    }

    pub fn curve(&self, kind: CurveKind) -> &ProtectionCurve {
        self.protection_curves
            .iter()
            .find(|c| c.kind == kind)
            .expect("normalized case carries both curves")
    }

    /// A load is a decision (has a binary L_i) only inside the off-outage
    /// area, with a breaker, and when it is not the restart motor.
    pub fn is_decision_load(&self, load: &LoadSpec) -> bool {
        load.kind != LoadKind::MotorRestart
            && load.sheddable
            && self
                .bus_index(load.bus)
                .map(|i| self.buses[i].off_outage())
                .unwrap_or(false)
    }

    fn check_topology(&self) -> Result<(), CaseError> {
        let mut seen = BTreeMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", b.id));
            }
        }
        match self.buses.iter().filter(|b| b.is_substation).count() {
            0 => return invalid("no substation"),
            1 => {}
            _ => return invalid("multiple substations"),
        }
        for l in &self.lines {
            for end in [l.from, l.to] {
                if !seen.contains_key(&end) {
                    return invalid(format!("line {} references unknown bus {end}", l.label()));
                }
            }
            if l.from == l.to {
                return invalid(format!("line {} is a self-loop", l.label()));
            }
        }
        // Union-find over closed lines detects cycles.
        let mut uf = UnionFind::new(self.buses.len());
        let mut closed = 0;
        for l in self.lines.iter().filter(|l| l.switch_state == SwitchState::Closed) {
            closed += 1;
            if !uf.union(seen[&l.from], seen[&l.to]) {
                return invalid(format!("network not radial (cycle through line {})", l.label()));
            }
        }
        if closed + 1 != self.buses.len() {
            return invalid("network not connected: closed lines do not span all buses");
        }
        Ok(())
    }

    fn derive_off_outage(&self) -> Result<Vec<bool>, CaseError> {
        let order = radial_order(self);
        let mut flag = vec![false; self.buses.len()];
        for ol in &order.lines {
            let line = &self.lines[ol.line];
            if line.is_tie_switch || flag[ol.from] {
                flag[ol.to] = true;
            }
        }
        Ok(flag)
    }

    fn validate(&self) -> Result<(), CaseError> {
        if !(self.bases.s_base_va > 0.0 && self.bases.v_base_v > 0.0) {
            return invalid("bases must be positive");
        }
        if !(self.bases.v_substation_sq > 0.0) {
            return invalid("v_substation_sq must be positive");
        }
        for l in &self.lines {
            if !(l.r >= 0.0) || !l.x.is_finite() {
                return invalid(format!("line {}: r must be >= 0 and x finite", l.label()));
            }
            if !(l.ampacity_sq > 0.0) {
                return invalid(format!("line {}: ampacity_sq must be > 0", l.label()));
            }
        }
        let sub = self.substation();
        let mut restart = 0;
        for ld in &self.loads {
            let Some(bi) = self.bus_index(ld.bus) else {
                return invalid(format!("load references unknown bus {}", ld.bus));
            };
            if bi == sub {
                return invalid("substation bus carries a load");
            }
            if !(ld.p0 >= 0.0) || !ld.q0.is_finite() {
                return invalid(format!("load at bus {}: P0 must be >= 0", ld.bus));
            }
            if !(ld.priority >= 0.0) || !ld.kp.is_finite() || !ld.kq.is_finite() {
                return invalid(format!("load at bus {}: bad coefficients", ld.bus));
            }
            if ld.kind == LoadKind::MotorRestart {
                restart += 1;
            }
        }
        match restart {
            0 => return invalid("no motor_restart load"),
            1 => {}
            _ => return invalid("more than one motor_restart load"),
        }
        for dg in &self.dgs {
            let Some(bi) = self.bus_index(dg.bus) else {
                return invalid(format!("DG references unknown bus {}", dg.bus));
            };
            if bi == sub {
                return invalid("DG placed at the substation bus");
            }
            if !(0.0 <= dg.p_max && dg.p_max <= dg.s_max) {
                return invalid(format!("DG at bus {}: need 0 <= p_max <= s_max", dg.bus));
            }
            if !(dg.q_min <= 0.0 && 0.0 <= dg.q_max) {
                return invalid(format!("DG at bus {}: need q_min <= 0 <= q_max", dg.bus));
            }
        }
        self.motor_model()
            .validate()
            .map_err(|e| CaseError::Invalid(format!("motor: {e}")))?;
        if !(self.motor.base_power_va > 0.0 && self.motor.base_voltage_v > 0.0 && self.motor.rating_va() > 0.0) {
            return invalid("motor bases must be positive");
        }
        self.motor
            .mech_load
            .validate()
            .map_err(|e| CaseError::Invalid(format!("mech_load: {e}")))?;
        for c in &self.protection_curves {
            c.validate().map_err(CaseError::Invalid)?;
        }
        if self.protection_curves.len() != 2 {
            return invalid("at most one protection curve per kind");
        }
        if !(self.weights.w_re >= 0.0 && self.weights.w_op >= 0.0) {
            return invalid("weights must be non-negative");
        }
        if self.scenario.steps == 0 {
            return invalid("scenario.steps must be >= 1");
        }
        if self.scenario.pwl_breakpoints < 2 {
            return invalid("scenario.pwl_breakpoints must be >= 2");
        }
        Ok(())
    }
}

/// A closed line oriented away from the substation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrientedLine {
    /// Index into `NetworkCase::lines`.
    pub line: usize,
    /// Parent (upstream) bus index.
    pub from: usize,
    /// Child (downstream) bus index.
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct RadialOrder {
    /// Depth-first preorder: each line's downstream subtree is contiguous.
    pub lines: Vec<OrientedLine>,
    /// Parent bus index per bus; `None` for the substation.
    pub parent: Vec<Option<usize>>,
    /// Index into `lines` of the line feeding each bus.
    pub feeder_line: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
}

/// Orients closed lines away from the substation in depth-first preorder.
pub fn radial_order(case: &NetworkCase) -> RadialOrder {
    let n = case.buses.len();
    let idx: BTreeMap<BusId, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (li, l) in case.lines.iter().enumerate() {
        if l.switch_state == SwitchState::Closed {
            let (a, b) = (idx[&l.from], idx[&l.to]);
            adj[a].push((b, li));
            adj[b].push((a, li));
        }
    }
    let root = case.buses.iter().position(|b| b.is_substation).unwrap_or(0);
    let mut parent = vec![None; n];
    let mut feeder_line = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut lines = Vec::with_capacity(n.saturating_sub(1));
    let mut stack: Vec<(usize, Option<(usize, usize)>)> = vec![(root, None)];
    visited[root] = true;
    while let Some((u, via)) = stack.pop() {
        if let Some((from, li)) = via {
            feeder_line[u] = Some(lines.len());
            lines.push(OrientedLine { line: li, from, to: u });
        }
        let mut next: Vec<(usize, usize)> = adj[u].iter().copied().filter(|(v, _)| !visited[*v]).collect();
        next.sort_by_key(|&(_, li)| li);
        for &(v, _) in &next {
            visited[v] = true;
            parent[v] = Some(u);
            children[u].push(v);
        }
        // Reversed so the lowest line index is expanded first.
        for &(v, li) in next.iter().rev() {
            stack.push((v, Some((u, li))));
        }
    }
    RadialOrder {
        lines,
        parent,
        feeder_line,
        children,
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }
    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
