//! Restoration model over all slip steps and decoding of its solutions.
//!
//! Per step `k` the builder emits the branch-flow equations in squared
//! voltages `V`, branch powers `p, q` and squared currents `F`, the motor's
//! torque balance, a piecewise-linear `1/T_acc` for the step duration, and
//! the protection limits as functions of the cumulative time `t_k`.
//!
//! Load statuses `L` exist only for decision loads (sheddable, inside the
//! off-outage area, not the restart motor); every other load is a constant
//! injection, which is how "outside the area stays on" is enforced.
//!
//! # Program size
//!
//! With `B` buses, `E = B - 1` closed lines, `D` decision loads, `G` DGs
//! (`G_s = G K` in per-step mode, `G` otherwise), `K` steps, `m` breakpoints
//! of the step-duration curve and `n` breakpoints of the protection curves,
//! `U` protected buses of which `U_d` carry exactly one decision load, `O`
//! protected lines, and `P = 1` when `U + O > 0` (else 0):
//!
//! ```text
//! variables = K (B + 3E + D + m + 3 + P (n + 2) + U_d) + D + 2 G_s
//! rows      = K (3E + 3D + 6 + P 4 + U + 3 U_d + O)
//! cones     = K E + G_s
//! sos2 sets = K P
//! ```
//!
//! The six fixed rows per step are stall, accelerating-torque definition,
//! timing, and the three rows of the duration curve. The duration curve
//! `1/(g T_acc)` is convex and only bounds the time from below, so it needs
//! no SOS2 set: any lambda overestimates the step time, which tightens
//! every protection limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearize::{emit_convex_pwl, emit_product, emit_pwl_multi, LinearizeError, PwlBlock};
use crate::motor::{step_coeffs, GridError, SlipGrid, StepCoeffs};
use crate::network::{radial_order, BusId, LoadKind, NetworkCase, RadialOrder, FORMAT_TAG};
use crate::program::{ConicProgram, Family, LinExpr, Sense, VarId};
use crate::protection::{approximate_on, breakpoint_grid, CurveKind, PwlCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Breakpoints of each protection curve approximation.
    pub pwl_breakpoints: usize,
    /// Breakpoints of the `1/T_acc` step-duration curve.
    pub duration_breakpoints: usize,
    pub per_step_dg: bool,
    /// Smallest admissible accelerating torque [p.u.].
    pub torque_floor: f64,
    /// Margin kept from every protection limit.
    pub protection_backoff: f64,
    /// Weight of the SOS2 tie-break term.
    pub sos2_tiebreak: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Drop all protection rows (for sensitivity studies).
    pub protection: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            pwl_breakpoints: 6,
            duration_breakpoints: 16,
            per_step_dg: false,
            torque_floor: 1e-3,
            protection_backoff: 1e-4,
            sos2_tiebreak: 1e-5,
            v_min: 0.25,
            v_max: 1.21,
            protection: true,
        }
    }
}

impl BuildOptions {
    /// Options taken from the case's scenario block.
    pub fn from_case(case: &NetworkCase) -> Self {
        BuildOptions {
            pwl_breakpoints: case.scenario.pwl_breakpoints,
            per_step_dg: case.scenario.per_step_dg,
            ..BuildOptions::default()
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("motor stalls at step {step} (slip {slip:.4}) even at maximum voltage: accelerating torque {torque:.4e} p.u.")]
    Stall { step: usize, slip: f64, torque: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error("invalid build option: {0}")]
    Options(String),
}

/// Handles into the emitted program.
#[derive(Debug, Clone)]
pub struct VarIndex {
    /// `[k][bus]`.
    pub v: Vec<Vec<VarId>>,
    /// `[k][e]` over `RadialOrder::lines`.
    pub p: Vec<Vec<VarId>>,
    pub q: Vec<Vec<VarId>>,
    pub f: Vec<Vec<VarId>>,
    /// Per case load: the status binary of decision loads.
    pub status: Vec<Option<VarId>>,
    /// `[k][g]`; all steps share the same ids unless per-step.
    pub dg_p: Vec<Vec<VarId>>,
    pub dg_q: Vec<Vec<VarId>>,
    pub t_acc: Vec<VarId>,
    pub dt: Vec<VarId>,
    pub t: Vec<VarId>,
    pub duration: Vec<PwlBlock>,
    /// Outputs are `[undervoltage floor, overcurrent multiplier]`.
    pub protection: Vec<Option<PwlBlock>>,
}

#[derive(Debug, Clone)]
pub struct RestorationProblem {
    pub program: ConicProgram,
    pub index: VarIndex,
    pub order: RadialOrder,
    pub grid: SlipGrid,
    pub coeffs: Vec<StepCoeffs>,
    pub options: BuildOptions,
    /// Protection approximations, when any protection is present.
    pub uv_pwl: Option<PwlCurve>,
    pub oc_pwl: Option<PwlCurve>,
    pub norm_re: f64,
    pub norm_op: f64,
    /// Upper end of the time axis covered by the protection curves [s].
    pub t_max: f64,
}

/// Grid from the case's scenario: `steps` steps ending at `s_end` when
/// given, otherwise the standard grid.
pub fn case_grid(case: &NetworkCase) -> Result<SlipGrid, GridError> {
    let motor = case.motor_model();
    match case.scenario.s_end {
        Some(s_end) => SlipGrid::to_end(case.scenario.steps, s_end),
        None => SlipGrid::standard(&motor, &case.motor.mech_load, case.scenario.steps),
    }
}

/// Builds the program with the case's own grid and scenario options.
pub fn build_for_case(case: &NetworkCase, options: &BuildOptions) -> Result<RestorationProblem, BuildError> {
    let grid = case_grid(case)?;
    let coeffs = step_coeffs(&case.motor_model(), &case.motor.mech_load, &grid);
    build_problem(case, &coeffs, &grid, options)
}

pub fn build_problem(
    case: &NetworkCase,
    coeffs: &[StepCoeffs],
    grid: &SlipGrid,
    options: &BuildOptions,
) -> Result<RestorationProblem, BuildError> {
    let o = options;
    if !(o.v_min > 0.0 && o.v_max > o.v_min) {
        return Err(BuildError::Options("need 0 < v_min < v_max".into()));
    }
    if o.duration_breakpoints < 2 || o.pwl_breakpoints < 2 {
        return Err(BuildError::Options("need at least two breakpoints".into()));
    }
    if !(o.torque_floor > 0.0) {
        return Err(BuildError::Options("torque floor must be positive".into()));
    }
    let order = radial_order(case);
    let nb = case.buses.len();
    let k_max = coeffs.len();
    let root = case.substation();
    let motor_bus = case.motor_bus();
    let v_sub = case.bases.v_substation_sq;
    let motor_v_max = if motor_bus == root { v_sub } else { o.v_max };

    // Infeasible by construction: not enough torque even at the top voltage.
    let mut t_acc_max = Vec::with_capacity(k_max);
    for c in coeffs {
        let top = c.accel_torque(motor_v_max);
        if top <= o.torque_floor {
            return Err(BuildError::Stall {
                step: c.k + 1,
                slip: c.slip,
                torque: top,
            });
        }
        t_acc_max.push(top);
    }
    let step_time_max = coeffs
        .iter()
        .map(|c| 1.0 / (c.inv_dt_gain * o.torque_floor))
        .fold(0.0, f64::max);
    let t_max = k_max as f64 * step_time_max;

    let protected_buses: Vec<usize> = (0..nb).filter(|&i| case.buses[i].has_undervoltage_protection).collect();
    let protected_lines: Vec<usize> = (0..order.lines.len())
        .filter(|&e| case.lines[order.lines[e].line].has_overcurrent_protection)
        .collect();
    let has_protection = o.protection && !(protected_buses.is_empty() && protected_lines.is_empty());
    let (uv_pwl, oc_pwl) = if has_protection {
        let uv = case.curve(CurveKind::Undervoltage);
        let oc = case.curve(CurveKind::Overcurrent);
        let bps = breakpoint_grid(&[uv, oc], o.pwl_breakpoints, 0.0, t_max);
        (Some(approximate_on(uv, &bps)), Some(approximate_on(oc, &bps)))
    } else {
        (None, None)
    };

    let decision: Vec<bool> = case.loads.iter().map(|l| case.is_decision_load(l)).collect();
    let load_bus: Vec<usize> = case.loads.iter().map(|l| case.bus_index(l.bus).expect("validated")).collect();
    let scale = case.motor_power_scale();

    let mut prog = ConicProgram::new();
    let status: Vec<Option<VarId>> = case
        .loads
        .iter()
        .zip(&decision)
        .map(|(l, &d)| d.then(|| prog.add_binary(format!("L[{}]", l.bus))))
        .collect();

    let make_dg = |prog: &mut ConicProgram, tag: &str| -> (Vec<VarId>, Vec<VarId>) {
        let mut ps = Vec::new();
        let mut qs = Vec::new();
        for d in &case.dgs {
            let p = prog.add_var(format!("Pdg[{}]{tag}", d.bus), 0.0, d.p_max);
            let q = prog.add_var(format!("Qdg[{}]{tag}", d.bus), d.q_min, d.q_max);
            prog.add_cone(
                vec![LinExpr::var(p), LinExpr::var(q)],
                LinExpr::constant(d.s_max),
                Family::DgCapacity,
                format!("dg_capacity[{}]{tag}", d.bus),
                d.s_max * d.s_max,
            );
            ps.push(p);
            qs.push(q);
        }
        (ps, qs)
    };
    let shared_dg = if o.per_step_dg { None } else { Some(make_dg(&mut prog, "")) };

    let mut index = VarIndex {
        v: Vec::new(),
        p: Vec::new(),
        q: Vec::new(),
        f: Vec::new(),
        status: status.clone(),
        dg_p: Vec::new(),
        dg_q: Vec::new(),
        t_acc: Vec::new(),
        dt: Vec::new(),
        t: Vec::new(),
        duration: Vec::new(),
        protection: Vec::new(),
    };
    let mut tiebreak = LinExpr::new();

    for (k, c) in coeffs.iter().enumerate() {
        let s = k + 1;
        let v: Vec<VarId> = (0..nb)
            .map(|i| {
                let id = case.buses[i].id;
                if i == root {
                    prog.add_var(format!("V[{id},{s}]"), v_sub, v_sub)
                } else {
                    prog.add_var(format!("V[{id},{s}]"), o.v_min, o.v_max)
                }
            })
            .collect();
        let mut pv = Vec::new();
        let mut qv = Vec::new();
        let mut fv = Vec::new();
        for ol in &order.lines {
            let name = case.lines[ol.line].label();
            pv.push(prog.add_var(format!("p[{name},{s}]"), f64::NEG_INFINITY, f64::INFINITY));
            qv.push(prog.add_var(format!("q[{name},{s}]"), f64::NEG_INFINITY, f64::INFINITY));
            fv.push(prog.add_var(format!("F[{name},{s}]"), 0.0, f64::INFINITY));
        }
        let (dg_p, dg_q) = match &shared_dg {
            Some(d) => d.clone(),
            None => make_dg(&mut prog, &format!("[{s}]")),
        };

        // Net load at each bus as affine expressions in V and y = L V.
        let mut pl: Vec<LinExpr> = vec![LinExpr::new(); nb];
        let mut ql: Vec<LinExpr> = vec![LinExpr::new(); nb];
        for (li, l) in case.loads.iter().enumerate() {
            let b = load_bus[li];
            let vb = v[b];
            match (l.kind, status[li]) {
                (LoadKind::MotorRestart, _) => {
                    let (gp, gq) = c.power_per_v();
                    pl[b].push(vb, scale * gp);
                    ql[b].push(vb, scale * gq);
                }
                (LoadKind::MotorEnergized, None) => {
                    pl[b].constant += l.p0;
                    ql[b].constant += l.q0;
                }
                (LoadKind::MotorEnergized, Some(lv)) => {
                    pl[b].push(lv, l.p0);
                    ql[b].push(lv, l.q0);
                }
                (LoadKind::Static, None) => {
                    pl[b].constant += l.p0 * (1.0 - 0.5 * l.kp);
                    pl[b].push(vb, l.p0 * 0.5 * l.kp);
                    ql[b].constant += l.q0 * (1.0 - 0.5 * l.kq);
                    ql[b].push(vb, l.q0 * 0.5 * l.kq);
                }
                (LoadKind::Static, Some(lv)) => {
                    let y = emit_product(&mut prog, lv, vb, o.v_max, &format!("LV[{},{s}]", l.bus))?;
                    pl[b].push(lv, l.p0 * (1.0 - 0.5 * l.kp));
                    pl[b].push(y, l.p0 * 0.5 * l.kp);
                    ql[b].push(lv, l.q0 * (1.0 - 0.5 * l.kq));
                    ql[b].push(y, l.q0 * 0.5 * l.kq);
                }
            }
        }
        for (g, d) in case.dgs.iter().enumerate() {
            let b = case.bus_index(d.bus).expect("validated");
            pl[b].push(dg_p[g], -1.0);
            ql[b].push(dg_q[g], -1.0);
        }

        for (e, ol) in order.lines.iter().enumerate() {
            let line = &case.lines[ol.line];
            let name = line.label();
            let (i, j) = (ol.from, ol.to);
            let z2 = line.r * line.r + line.x * line.x;
            prog.add_row(
                LinExpr::var(v[i]).add(v[j], -1.0).add(pv[e], -2.0 * line.r).add(qv[e], -2.0 * line.x).add(fv[e], z2),
                Sense::Eq,
                Family::Voltage,
                format!("voltage[{name},{s}]"),
            );
            let mut bp = LinExpr::var(pv[e]).add(fv[e], -line.r);
            let mut bq = LinExpr::var(qv[e]).add(fv[e], -line.x);
            for &child in &order.children[j] {
                let ce = order.feeder_line[child].expect("child has a feeder line");
                bp.push(pv[ce], -1.0);
                bq.push(qv[ce], -1.0);
            }
            bp.extend_scaled(&pl[j], -1.0);
            bq.extend_scaled(&ql[j], -1.0);
            prog.add_row(bp, Sense::Eq, Family::BalanceP, format!("balance_p[{name},{s}]"));
            prog.add_row(bq, Sense::Eq, Family::BalanceQ, format!("balance_q[{name},{s}]"));
            prog.add_cone(
                vec![
                    LinExpr::new().add(pv[e], 2.0),
                    LinExpr::new().add(qv[e], 2.0),
                    LinExpr::var(fv[e]).add(v[i], -1.0),
                ],
                LinExpr::var(fv[e]).add(v[i], 1.0),
                Family::LineCurrent,
                format!("current[{name},{s}]"),
                line.ampacity_sq * o.v_max,
            );
        }

        // Torque balance and step duration.
        let vm = v[motor_bus];
        let tl = c.load_torque();
        prog.add_row(
            LinExpr::new().add(vm, c.torque_gain).plus(-tl),
            Sense::Ge,
            Family::Stall,
            format!("stall[{s}]"),
        );
        let t_acc = prog.add_var(format!("Tacc[{s}]"), o.torque_floor, t_acc_max[k]);
        prog.add_row(
            LinExpr::var(t_acc).add(vm, -c.torque_gain).plus(tl),
            Sense::Eq,
            Family::AccelTorque,
            format!("accel[{s}]"),
        );
        let bps = geometric(o.torque_floor, t_acc_max[k], o.duration_breakpoints);
        let vals: Vec<f64> = bps.iter().map(|&x| 1.0 / (c.inv_dt_gain * x)).collect();
        let dur = emit_convex_pwl(&mut prog, t_acc, &bps, &vals, &format!("duration[{s}]"))?;
        let dt = dur.output();
        // t_k is when the slip reaches S_k: the durations of the steps before.
        let t = prog.add_var(format!("t[{s}]"), 0.0, k as f64 * step_time_max);
        let mut timing = LinExpr::var(t);
        if k > 0 {
            timing = timing.add(index.t[k - 1], -1.0).add(index.dt[k - 1], -1.0);
        }
        prog.add_row(timing, Sense::Eq, Family::Timing, format!("timing[{s}]"));

        let prot = match (&uv_pwl, &oc_pwl) {
            (Some(uv), Some(oc)) => {
                let blk = emit_pwl_multi(
                    &mut prog,
                    t,
                    &uv.breakpoints,
                    &[uv.values.clone(), oc.values.clone()],
                    &format!("protection[{s}]"),
                )?;
                add_tiebreak(&mut tiebreak, &blk);
                let (floor, mult) = (blk.outputs[0], blk.outputs[1]);
                let u_floor = uv.values.iter().copied().fold(0.0, f64::max);
                for &b in &protected_buses {
                    let id = case.buses[b].id;
                    let on_bus: Vec<usize> = (0..case.loads.len()).filter(|&li| load_bus[li] == b).collect();
                    let only = match on_bus.as_slice() {
                        [li] => status[*li],
                        _ => None,
                    };
                    let row = match only {
                        Some(lv) if u_floor > 0.0 => {
                            let z = emit_product(&mut prog, lv, floor, u_floor, &format!("LVmin[{id},{s}]"))?;
                            LinExpr::var(v[b]).add(z, -1.0).add(lv, -o.protection_backoff)
                        }
                        _ => LinExpr::var(v[b]).add(floor, -1.0).plus(-o.protection_backoff),
                    };
                    prog.add_row(row, Sense::Ge, Family::Undervoltage, format!("undervoltage[{id},{s}]"));
                }
                for &e in &protected_lines {
                    let line = &case.lines[order.lines[e].line];
                    prog.add_row(
                        LinExpr::var(fv[e])
                            .add(mult, -line.ampacity_sq)
                            .plus(line.ampacity_sq * o.protection_backoff),
                        Sense::Le,
                        Family::Overcurrent,
                        format!("overcurrent[{},{s}]", line.label()),
                    );
                }
                Some(blk)
            }
            _ => None,
        };

        index.v.push(v);
        index.p.push(pv);
        index.q.push(qv);
        index.f.push(fv);
        index.dg_p.push(dg_p);
        index.dg_q.push(dg_q);
        index.t_acc.push(t_acc);
        index.dt.push(dt);
        index.t.push(t);
        index.duration.push(dur);
        index.protection.push(prot);
    }

    // Objective: normalized shed cost plus normalized losses.
    let norm_re = positive_or_one(
        case.loads
            .iter()
            .zip(&decision)
            .filter(|(_, &d)| d)
            .map(|(l, _)| l.priority * l.p0)
            .sum(),
    );
    let norm_op = positive_or_one(order.lines.iter().map(|ol| case.lines[ol.line].r * case.lines[ol.line].ampacity_sq).sum());
    let w = case.weights;
    let mut obj = LinExpr::new();
    for (li, l) in case.loads.iter().enumerate() {
        if let Some(lv) = status[li] {
            let c = w.w_re * l.priority * l.p0 / norm_re;
            obj.constant += c;
            obj.push(lv, -c);
        }
    }
    for fv in &index.f {
        for (e, &f) in fv.iter().enumerate() {
            obj.push(f, w.w_op * case.lines[order.lines[e].line].r / norm_op);
        }
    }
    obj.extend_scaled(&tiebreak, o.sos2_tiebreak);
    prog.objective = obj;

    debug_assert!(prog.check().is_ok());
    Ok(RestorationProblem {
        program: prog,
        index,
        order,
        grid: grid.clone(),
        coeffs: coeffs.to_vec(),
        options: o.clone(),
        uv_pwl,
        oc_pwl,
        norm_re,
        norm_op,
        t_max,
    })
}

fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

/// `n` geometrically spaced points from `a` to `b`.
fn geometric(a: f64, b: f64, n: usize) -> Vec<f64> {
    let r = (b / a).ln() / (n - 1) as f64;
    let mut pts: Vec<f64> = (0..n).map(|i| a * (r * i as f64).exp()).collect();
    pts[0] = a;
    pts[n - 1] = b;
    pts
}

/// Convex weights on the breakpoints (slope `j` on segment `j`) make an
/// interior-point solution pick adjacent lambdas when the objective is
/// otherwise indifferent to them.
fn add_tiebreak(acc: &mut LinExpr, blk: &PwlBlock) {
    let w = &blk.breakpoints;
    let mut phi = 0.0;
    for (i, &l) in blk.lambdas.iter().enumerate() {
        if i > 0 {
            phi += (i - 1) as f64 * (w[i] - w[i - 1]);
        }
        acc.push(l, phi);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStatus {
    pub bus: BusId,
    pub kind: LoadKind,
    /// Whether the optimizer decided this load.
    pub decision: bool,
    pub energized: bool,
    pub priority: f64,
    #[serde(rename = "P0")]
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgSetpoint {
    pub bus: BusId,
    /// Per step [p.u.].
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    /// 1-based step number.
    pub k: usize,
    pub slip: f64,
    /// Squared voltage per bus, in case bus order [p.u.^2].
    pub v: Vec<f64>,
    /// Per case line; zero for open lines [p.u.].
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Squared current per case line [p.u.^2].
    pub f: Vec<f64>,
    pub t_ele: f64,
    pub t_load: f64,
    pub t_acc: f64,
    /// Exact duration `1/(g T_acc)` [s].
    pub dt: f64,
    /// Exact time at which the slip reaches this step's value: the sum of
    /// the previous durations [s].
    pub t: f64,
    /// Values carried by the piecewise-linear chain, for audit.
    pub dt_pwl: f64,
    pub t_pwl: f64,
    pub uv_floor_pwl: Option<f64>,
    pub oc_multiplier_pwl: Option<f64>,
    pub p_sub: f64,
    pub q_sub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// Priority-weighted shed load [p.u.].
    pub f_re_raw: f64,
    pub f_re_normalized: f64,
    /// Line losses summed over steps [p.u.].
    pub f_op_raw: f64,
    pub f_op_normalized: f64,
    /// Weighted objective without the tie-break term.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub location: String,
    /// 1-based step.
    pub step: usize,
    /// Distance to the limit on the safe side (squared units).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationPlan {
    pub format: String,
    pub scenario: String,
    pub bus_ids: Vec<BusId>,
    pub line_labels: Vec<String>,
    pub grid: SlipGrid,
    pub loads: Vec<LoadStatus>,
    pub dg: Vec<DgSetpoint>,
    pub steps: Vec<StepState>,
    pub objectives: Objectives,
    /// Smallest `V - floor` over energized protected buses, against the
    /// approximated floor at `t_k`.
    pub min_voltage_margin: Option<Margin>,
    /// Smallest `F_max - F` over protected lines.
    pub min_current_margin: Option<Margin>,
    pub cone_residual: f64,
    pub warnings: Vec<String>,
}

impl RestorationPlan {
    pub fn shed_buses(&self) -> Vec<BusId> {
        self.loads.iter().filter(|l| l.decision && !l.energized).map(|l| l.bus).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("solution violates {label} by {violation:.3e}")]
    Tolerance { label: String, violation: f64 },
    #[error("solution has {got} entries, program has {want} variables")]
    Length { got: usize, want: usize },
}

pub const DECODE_TOL: f64 = 1e-5;

pub fn decode(problem: &RestorationProblem, case: &NetworkCase, x: &[f64]) -> Result<RestorationPlan, DecodeError> {
    let prog = &problem.program;
    if x.len() != prog.vars.len() {
        return Err(DecodeError::Length {
            got: x.len(),
            want: prog.vars.len(),
        });
    }
    let (worst, label) = prog.worst_violation(x);
    if worst > DECODE_TOL {
        return Err(DecodeError::Tolerance { label, violation: worst });
    }
    let idx = &problem.index;
    let order = &problem.order;
    let motor_bus = case.motor_bus();
    let nl = case.lines.len();

    let loads: Vec<LoadStatus> = case
        .loads
        .iter()
        .enumerate()
        .map(|(li, l)| LoadStatus {
            bus: l.bus,
            kind: l.kind,
            decision: idx.status[li].is_some(),
            energized: idx.status[li].map_or(true, |v| x[v.0] > 0.5),
            priority: l.priority,
            p0: l.p0,
        })
        .collect();
    let dg = case
        .dgs
        .iter()
        .enumerate()
        .map(|(g, d)| DgSetpoint {
            bus: d.bus,
            p: idx.dg_p.iter().map(|s| x[s[g].0]).collect(),
            q: idx.dg_q.iter().map(|s| x[s[g].0]).collect(),
        })
        .collect();

    let root = case.substation();
    let mut steps = Vec::with_capacity(problem.coeffs.len());
    let mut t_exact = 0.0;
    let mut warnings = Vec::new();
    let mut vmargin: Option<Margin> = None;
    let mut cmargin: Option<Margin> = None;
    for (k, c) in problem.coeffs.iter().enumerate() {
        let v: Vec<f64> = idx.v[k].iter().map(|id| x[id.0]).collect();
        let mut p = vec![0.0; nl];
        let mut q = vec![0.0; nl];
        let mut f = vec![0.0; nl];
        for (e, ol) in order.lines.iter().enumerate() {
            p[ol.line] = x[idx.p[k][e].0];
            q[ol.line] = x[idx.q[k][e].0];
            f[ol.line] = x[idx.f[k][e].0];
        }
        let (mut p_sub, mut q_sub) = (0.0, 0.0);
        for (e, ol) in order.lines.iter().enumerate() {
            if ol.from == root {
                p_sub += x[idx.p[k][e].0];
                q_sub += x[idx.q[k][e].0];
            }
        }
        let vm = v[motor_bus];
        let t_acc = c.accel_torque(vm);
        let dt = 1.0 / (c.inv_dt_gain * t_acc);
        for (i, &vi) in v.iter().enumerate() {
            if i != root && !(0.81 - 1e-9..=1.21 + 1e-9).contains(&vi) {
                warnings.push(format!(
                    "step {}: V at bus {} = {vi:.4} outside the static-load model window [0.81, 1.21]",
                    k + 1,
                    case.buses[i].id
                ));
            }
        }
        let (floor, mult) = match &idx.protection[k] {
            Some(b) => (Some(x[b.outputs[0].0]), Some(x[b.outputs[1].0])),
            None => (None, None),
        };
        if let Some(fl) = floor {
            for (i, b) in case.buses.iter().enumerate() {
                if !b.has_undervoltage_protection {
                    continue;
                }
                let shed = loads.iter().any(|l| l.bus == b.id && l.decision && !l.energized)
                    && loads.iter().filter(|l| l.bus == b.id).count() == 1;
                if shed {
                    continue;
                }
                let m = v[i] - fl;
                if vmargin.as_ref().map_or(true, |w| m < w.margin) {
                    vmargin = Some(Margin {
                        location: format!("bus {}", b.id),
                        step: k + 1,
                        margin: m,
                    });
                }
            }
        }
        if let Some(mu) = mult {
            for ol in &order.lines {
                let line = &case.lines[ol.line];
                if !line.has_overcurrent_protection {
                    continue;
                }
                let m = line.ampacity_sq * mu - f[ol.line];
                if cmargin.as_ref().map_or(true, |w| m < w.margin) {
                    cmargin = Some(Margin {
                        location: format!("line {}", line.label()),
                        step: k + 1,
                        margin: m,
                    });
                }
            }
        }
        steps.push(StepState {
            k: k + 1,
            slip: c.slip,
            t_ele: c.torque_gain * vm,
            t_load: c.load_torque(),
            t_acc,
            dt,
            t: t_exact,
            dt_pwl: x[idx.dt[k].0],
            t_pwl: x[idx.t[k].0],
            uv_floor_pwl: floor,
            oc_multiplier_pwl: mult,
            v,
            p,
            q,
            f,
            p_sub,
            q_sub,
        });
        t_exact += dt;
    }

    let f_re_raw: f64 = loads.iter().filter(|l| l.decision && !l.energized).map(|l| l.priority * l.p0).sum::<f64>() + 0.0;
    let f_op_raw: f64 = steps
        .iter()
        .map(|s| case.lines.iter().zip(&s.f).map(|(l, f)| l.r * f).sum::<f64>())
        .sum();
    let f_re_normalized = f_re_raw / problem.norm_re;
    let f_op_normalized = f_op_raw / problem.norm_op;
    let objectives = Objectives {
        f_re_raw,
        f_re_normalized,
        f_op_raw,
        f_op_normalized,
        total: case.weights.w_re * f_re_normalized + case.weights.w_op * f_op_normalized,
    };

    Ok(RestorationPlan {
        format: FORMAT_TAG.into(),
        scenario: case.scenario.id.clone(),
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        line_labels: case.lines.iter().map(|l| l.label()).collect(),
        grid: problem.grid.clone(),
        loads,
        dg,
        steps,
        objectives,
        min_voltage_margin: vmargin,
        min_current_margin: cmargin,
        cone_residual: crate::solver::bnb::check_cone_tightness(prog, x),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::load_case;
    use crate::program::Family;
    use crate::solver::bnb::{solve_misocp, BnbStatus, Budget};
    use serde_json::{json, Value};

    const DEGENERATE: &str = include_str!("../../../data/degenerate.json");
    const MINI: &str = include_str!("../../../data/mini.json");
    const FEEDER: &str = include_str!("../../../data/feeder_e.json");

    fn two_bus(k: usize) -> NetworkCase {
        let mut v: Value = serde_json::from_str(DEGENERATE).unwrap();
        v["buses"] = json!([{"id": 1, "is_substation": true}, {"id": 2}]);
        v["lines"] = json!([{"from": 1, "to": 2, "r": 0.01, "x": 0.03, "ampacity_sq": 16.0}]);
        v["loads"] = json!([{"bus": 2, "P0": 0.5, "Q0": 0.25, "kind": "motor_restart"}]);
        v["scenario"]["steps"] = json!(k);
        load_case(&v.to_string()).unwrap()
    }

    fn solve(case: &NetworkCase, opts: &BuildOptions) -> (RestorationProblem, RestorationPlan, Vec<f64>) {
        let pb = build_for_case(case, opts).unwrap();
        let r = solve_misocp(&pb.program, &Budget::default());
        assert_eq!(r.status, BnbStatus::Optimal);
        let x = r.incumbent.unwrap().x;
        let plan = decode(&pb, case, &x).unwrap();
        (pb, plan, x)
    }

    #[test]
    fn single_step_two_bus_counts_by_hand() {
        let case = two_bus(1);
        let pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
        let p = &pb.program;
        assert_eq!(p.count_rows(Family::Voltage), 1);
        assert_eq!(p.count_rows(Family::BalanceP), 1);
        assert_eq!(p.count_rows(Family::BalanceQ), 1);
        assert_eq!(p.count_cones(Family::LineCurrent), 1);
        assert_eq!(p.count_rows(Family::Stall), 1);
        assert_eq!(p.count_rows(Family::Undervoltage) + p.count_rows(Family::Overcurrent), 0);
        assert_eq!(p.num_binaries(), 0);
        assert!(p.sos2.is_empty());
        // V x2, p, q, F, Tacc, dt, t, 16 duration weights.
        assert_eq!(p.vars.len(), 2 + 3 + 3 + 16);
    }

    #[test]
    fn bundled_case_matches_count_formula() {
        let case = load_case(FEEDER).unwrap();
        let o = BuildOptions::from_case(&case);
        let pb = build_for_case(&case, &o).unwrap();
        let k = pb.coeffs.len();
        let b = case.buses.len();
        let e = b - 1;
        let d = pb.index.status.iter().flatten().count();
        let g_s = if o.per_step_dg { case.dgs.len() * k } else { case.dgs.len() };
        let m = o.duration_breakpoints;
        let n = pb.uv_pwl.as_ref().unwrap().breakpoints.len();
        let u = case.buses.iter().filter(|x| x.has_undervoltage_protection).count();
        let u_d = case
            .buses
            .iter()
            .filter(|x| x.has_undervoltage_protection)
            .filter(|x| {
                let here: Vec<_> = case.loads.iter().filter(|l| l.bus == x.id).collect();
                here.len() == 1 && case.is_decision_load(here[0])
            })
            .count();
        let ol = case.lines.iter().filter(|l| l.has_overcurrent_protection).count();
        let p = usize::from(u + ol > 0);
        assert_eq!((k, n, d), (20, 6, 11));
        assert_eq!(pb.program.vars.len(), k * (b + 3 * e + d + m + 3 + p * (n + 2) + u_d) + d + 2 * g_s);
        assert_eq!(pb.program.rows.len(), k * (3 * e + 3 * d + 6 + 4 * p + u + 3 * u_d + ol));
        assert_eq!(pb.program.cones.len(), k * e + g_s);
        assert_eq!(pb.program.sos2.len(), k * p);
    }

    #[test]
    fn degenerate_case_keeps_every_load() {
        let case = load_case(DEGENERATE).unwrap();
        let (pb, plan, _) = solve(&case, &BuildOptions::from_case(&case));
        assert_eq!(pb.program.num_binaries(), 0);
        assert!(plan.loads.iter().all(|l| l.energized));
        assert!(plan.shed_buses().is_empty());
    }

    #[test]
    fn loads_outside_the_area_or_without_breaker_get_no_decision() {
        for text in [DEGENERATE, MINI, FEEDER] {
            let case = load_case(text).unwrap();
            let pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
            for (l, s) in case.loads.iter().zip(&pb.index.status) {
                let bus = &case.buses[case.bus_index(l.bus).unwrap()];
                if !l.sheddable || !bus.off_outage() || l.kind == LoadKind::MotorRestart {
                    assert!(s.is_none(), "load at bus {}", l.bus);
                }
            }
        }
    }

    #[test]
    fn reliability_term_reevaluates_from_statuses() {
        let case = load_case(MINI).unwrap();
        let (pb, plan, x) = solve(&case, &BuildOptions::from_case(&case));
        let status: Vec<VarId> = pb.index.status.iter().flatten().copied().collect();
        let term: f64 = pb.program.objective.constant
            + pb
                .program
                .objective
                .terms
                .iter()
                .filter(|(v, _)| status.contains(v))
                .map(|(v, c)| c * x[v.0])
                .sum::<f64>();
        let direct: f64 = case
            .loads
            .iter()
            .zip(&plan.loads)
            .filter(|(_, s)| s.decision && !s.energized)
            .map(|(l, _)| l.priority * l.p0)
            .sum();
        assert!((term - case.weights.w_re * direct / pb.norm_re).abs() < 1e-8);
        assert!((plan.objectives.f_re_raw - direct).abs() < 1e-12);
        assert!(!plan.shed_buses().is_empty());
    }

    #[test]
    fn timing_is_increasing_and_starts_at_zero() {
        let case = load_case(MINI).unwrap();
        let (_, plan, _) = solve(&case, &BuildOptions::from_case(&case));
        assert_eq!(plan.steps[0].t, 0.0);
        for w in plan.steps.windows(2) {
            assert!(w[0].dt > 0.0);
            assert!(w[1].t > w[0].t);
            assert!((w[1].t - w[0].t - w[0].dt).abs() < 1e-12);
            assert!(w[1].t_pwl >= w[1].t - 1e-6, "chain must overestimate time");
        }
    }

    #[test]
    fn dropping_protection_never_sheds_more() {
        let case = load_case(MINI).unwrap();
        let with = solve(&case, &BuildOptions::from_case(&case)).1;
        let without = solve(
            &case,
            &BuildOptions {
                protection: false,
                ..BuildOptions::from_case(&case)
            },
        )
        .1;
        assert!(without.objectives.f_re_raw <= with.objectives.f_re_raw + 1e-9);
    }

    #[test]
    fn constant_torque_plan_clears_standstill_load() {
        let mut case = load_case(MINI).unwrap();
        case.motor.mech_load = crate::motor::MechLoad {
            kind: crate::motor::MechLoadKind::Constant,
            t_nom: 0.95,
        };
        let (pb, plan, _) = solve(&case, &BuildOptions::from_case(&case));
        let c1 = pb.coeffs[0].torque_gain;
        assert!(c1 * plan.steps[0].v[case.motor_bus()] - 0.95 >= 0.0);
    }

    #[test]
    fn stall_at_top_voltage_is_caught_before_solving() {
        let mut case = two_bus(3);
        case.motor.mech_load = crate::motor::MechLoad {
            kind: crate::motor::MechLoadKind::Constant,
            t_nom: 50.0,
        };
        let grid = SlipGrid::uniform(3, 0.1).unwrap();
        let coeffs = step_coeffs(&case.motor_model(), &case.motor.mech_load, &grid);
        let err = build_problem(&case, &coeffs, &grid, &BuildOptions::default()).err().unwrap();
        assert!(matches!(err, BuildError::Stall { step: 1, .. }), "{err}");
    }
}
