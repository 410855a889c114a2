//! Time-domain check of a restoration plan: the motor's swing equation
//! integrated against quasi-static phasor solves of the feeder.
//!
//! Loads are evaluated with their exact exponential model, the restarting
//! motor as its slip-dependent input impedance and DGs as ideal PQ
//! injections. Nothing here reuses the optimizer's linearizations.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motor::{input_impedance_complex, load_torque, torque_gain, MotorModel};
use crate::network::{radial_order, BusId, LoadKind, NetworkCase, RadialOrder};
use crate::protection::CurveKind;
use crate::restoration::RestorationPlan;

pub const SWEEP_TOL: f64 = 1e-10;
pub const SWEEP_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("power flow failed after {iterations} sweeps (residual {last_change:.3e} p.u.): voltage collapse")]
    Diverged { iterations: usize, last_change: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("at t = {t:.4} s: {source}")]
    Snapshot { t: f64, source: SnapshotError },
    #[error("invalid simulation settings: {0}")]
    Config(String),
}

/// Phasor state of the feeder.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Per bus [p.u.].
    pub v: Vec<Complex64>,
    /// Per case line, flowing away from the substation; zero when open.
    pub i_line: Vec<Complex64>,
    pub s_sub: Complex64,
    /// Per DG, as injected.
    pub s_dg: Vec<Complex64>,
    /// Total consumption per bus, motor included.
    pub s_load: Vec<Complex64>,
    pub losses: Complex64,
    pub iterations: usize,
}

impl Snapshot {
    /// `|S_sub + S_dg - S_load - losses|`, which vanishes at a converged
    /// solution.
    pub fn energy_residual(&self) -> f64 {
        let gen: Complex64 = self.s_sub + self.s_dg.iter().sum::<Complex64>();
        let used: Complex64 = self.s_load.iter().sum::<Complex64>() + self.losses;
        (gen - used).norm()
    }
}

/// Operating point applied to the feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    /// Per case load.
    pub energized: Vec<bool>,
    /// Per DG `(P, Q)` injection [p.u.].
    pub dg: Vec<(f64, f64)>,
}

impl Operation {
    /// Every load on, DGs idle.
    pub fn all_on(case: &NetworkCase) -> Self {
        Operation {
            energized: vec![true; case.loads.len()],
            dg: vec![(0.0, 0.0); case.dgs.len()],
        }
    }
}

/// Solves the feeder by backward/forward sweep. `motor_slip = None` leaves
/// the restarting motor disconnected. `guess` seeds the bus voltages.
pub fn network_snapshot(
    case: &NetworkCase,
    order: &RadialOrder,
    op: &Operation,
    motor_slip: Option<f64>,
    guess: Option<&[Complex64]>,
) -> Result<Snapshot, SnapshotError> {
    let nb = case.buses.len();
    let root = case.substation();
    let v0 = Complex64::new(case.bases.v_substation_sq.sqrt(), 0.0);
    let mut v: Vec<Complex64> = match guess {
        Some(g) => g.to_vec(),
        None => vec![v0; nb],
    };
    v[root] = v0;
    let load_bus: Vec<usize> = case.loads.iter().map(|l| case.bus_index(l.bus).expect("validated")).collect();
    let dg_bus: Vec<usize> = case.dgs.iter().map(|d| case.bus_index(d.bus).expect("validated")).collect();
    let motor_y = motor_slip.map(|s| case.motor_power_scale() / input_impedance_complex(&case.motor_model(), s));
    let z_line: Vec<Complex64> = order
        .lines
        .iter()
        .map(|ol| Complex64::new(case.lines[ol.line].r, case.lines[ol.line].x))
        .collect();

    let bus_power = |v: &[Complex64]| -> Vec<Complex64> {
        let mut s = vec![Complex64::new(0.0, 0.0); nb];
        for (li, l) in case.loads.iter().enumerate() {
            if !op.energized[li] {
                continue;
            }
            let b = load_bus[li];
            let vm = v[b].norm();
            s[b] += match l.kind {
                LoadKind::Static => Complex64::new(l.p0 * vm.powf(l.kp), l.q0 * vm.powf(l.kq)),
                LoadKind::MotorEnergized => Complex64::new(l.p0, l.q0),
                LoadKind::MotorRestart => match motor_y {
                    Some(y) => (y * vm * vm).conj(),
                    None => Complex64::new(0.0, 0.0),
                },
            };
        }
        s
    };

    // Each bus load is held as an admittance fitted at the previous
    // iterate (exact for the motor) and each DG as a current source. The
    // backward pass reduces every subtree to `I = y V + j` seen from its
    // feeding bus; the forward pass then places the voltages.
    let zero = Complex64::new(0.0, 0.0);
    let mut y_in = vec![zero; order.lines.len()];
    let mut j_in = vec![zero; order.lines.len()];
    let mut i_branch = vec![zero; order.lines.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let s_load = bus_power(&v);
        let mut y_sub: Vec<Complex64> = (0..nb).map(|b| s_load[b].conj() / v[b].norm_sqr()).collect();
        let mut j_sub = vec![zero; nb];
        for (g, &b) in dg_bus.iter().enumerate() {
            let s = Complex64::new(op.dg[g].0, op.dg[g].1);
            j_sub[b] -= (s / v[b]).conj();
        }
        for e in (0..order.lines.len()).rev() {
            let to = order.lines[e].to;
            for &c in &order.children[to] {
                let ce = order.feeder_line[c].expect("child has a feeder");
                y_sub[to] += y_in[ce];
                j_sub[to] += j_in[ce];
            }
            let d = Complex64::new(1.0, 0.0) + z_line[e] * y_sub[to];
            y_in[e] = y_sub[to] / d;
            j_in[e] = j_sub[to] / d;
        }
        let mut change: f64 = 0.0;
        for (e, ol) in order.lines.iter().enumerate() {
            i_branch[e] = y_in[e] * v[ol.from] + j_in[e];
            let nv = v[ol.from] - z_line[e] * i_branch[e];
            change = change.max((nv - v[ol.to]).norm());
            v[ol.to] = nv;
        }
        if change <= SWEEP_TOL {
            break;
        }
        if iterations >= SWEEP_MAX_ITER || !change.is_finite() {
            return Err(SnapshotError::Diverged {
                iterations,
                last_change: change,
            });
        }
    }

    let s_load = bus_power(&v);
    let mut i_line = vec![Complex64::new(0.0, 0.0); case.lines.len()];
    let mut losses = Complex64::new(0.0, 0.0);
    let mut s_sub = Complex64::new(0.0, 0.0);
    for (e, ol) in order.lines.iter().enumerate() {
        i_line[ol.line] = i_branch[e];
        losses += z_line[e] * i_branch[e].norm_sqr();
        if ol.from == root {
            s_sub += v[root] * i_branch[e].conj();
        }
    }
    let snap = Snapshot {
        v,
        i_line,
        s_sub,
        s_dg: op.dg.iter().map(|&(p, q)| Complex64::new(p, q)).collect(),
        s_load,
        losses,
        iterations,
    };
    // A load refitted as an ever larger admittance can pin a bus at zero
    // volts; the sweep then settles while the powers no longer balance.
    let mismatch = snap.energy_residual();
    if mismatch > 1e-6 {
        return Err(SnapshotError::Diverged {
            iterations,
            last_change: mismatch,
        });
    }
    Ok(snap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Trapezoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Time the slip must stay (nearly) still before a stall is declared [s].
    pub stall_window: f64,
    /// Decrease rate at or below which the motor counts as not accelerating.
    pub stall_rate: f64,
    pub steady_window: f64,
    pub steady_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 30.0,
            integrator: Integrator::Rk4,
            stall_window: 0.5,
            stall_rate: 1e-5,
            steady_window: 0.2,
            steady_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Energization,
    Trip { location: String, quantity: f64, limit: f64 },
    Stall { slip: f64 },
    SteadyState { slip: f64 },
    Horizon { slip: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Started,
    Stalled,
    Tripped,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub slip: f64,
    /// Magnitudes [p.u.].
    pub v_motor: f64,
    pub i_motor: f64,
    pub t_ele: f64,
    pub t_load: f64,
    /// Per entry of `Trajectory::protected_buses`.
    pub v_protected: Vec<f64>,
    /// Per entry of `Trajectory::protected_lines`.
    pub i_protected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Under-voltage relays that stay armed (buses whose loads are not all
    /// shed).
    pub protected_buses: Vec<BusId>,
    /// Over-current relays: `(label, F_th)`.
    pub protected_lines: Vec<(String, f64)>,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    /// Largest power-balance residual over the recorded snapshots [p.u.].
    pub max_energy_residual: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,S,V_motor,I_motor,T_ele,T_load");
        for b in &self.protected_buses {
            let _ = write!(out, ",V_{b}");
        }
        for (l, _) in &self.protected_lines {
            let _ = write!(out, ",I_{l}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(
                out,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9}",
                s.t, s.slip, s.v_motor, s.i_motor, s.t_ele, s.t_load
            );
            for x in s.v_protected.iter().chain(&s.i_protected) {
                let _ = write!(out, ",{x:.9}");
            }
            out.push('\n');
        }
        out
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = match &e.kind {
                EventKind::Energization => writeln!(out, "t={:.6} energization", e.t),
                EventKind::Trip { location, quantity, limit } => {
                    writeln!(out, "t={:.6} trip {location} value={quantity:.6} limit={limit:.6}", e.t)
                }
                EventKind::Stall { slip } => writeln!(out, "t={:.6} stall S={slip:.6}", e.t),
                EventKind::SteadyState { slip } => writeln!(out, "t={:.6} steady_state S={slip:.6}", e.t),
                EventKind::Horizon { slip } => writeln!(out, "t={:.6} horizon S={slip:.6}", e.t),
            };
        }
        out
    }

    /// Linear interpolation of a sample column at time `t`.
    pub fn at(&self, t: f64, column: impl Fn(&Sample) -> f64) -> Option<f64> {
        let s = &self.samples;
        if s.is_empty() || t < s[0].t || t > s[s.len() - 1].t {
            return None;
        }
        let i = s.partition_point(|x| x.t <= t);
        if i == 0 {
            return Some(column(&s[0]));
        }
        if i == s.len() {
            return Some(column(&s[i - 1]));
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let w = (t - a.t) / (b.t - a.t);
        Some(column(a) + w * (column(b) - column(a)))
    }

    /// First time the slip falls to `slip` or below.
    pub fn time_at_slip(&self, slip: f64) -> Option<f64> {
        let s = &self.samples;
        let i = s.iter().position(|x| x.slip <= slip)?;
        if i == 0 {
            return Some(s[0].t);
        }
        let (a, b) = (&s[i - 1], &s[i]);
        Some(a.t + (b.t - a.t) * (a.slip - slip) / (a.slip - b.slip))
    }
}

/// Plan settings applied to the feeder during the start: load statuses and
/// the DG setpoint of the step the slip currently sits in.
pub fn plan_operation(plan: &RestorationPlan, slip: f64) -> Operation {
    let k = plan
        .grid
        .steps
        .iter()
        .rposition(|&s| s >= slip)
        .unwrap_or(0)
        .min(plan.steps.len().saturating_sub(1));
    Operation {
        energized: plan.loads.iter().map(|l| l.energized).collect(),
        dg: plan
            .dg
            .iter()
            .map(|d| (d.p.get(k).copied().unwrap_or(0.0), d.q.get(k).copied().unwrap_or(0.0)))
            .collect(),
    }
}

struct Model<'a> {
    case: &'a NetworkCase,
    plan: &'a RestorationPlan,
    order: RadialOrder,
    motor: MotorModel,
    motor_bus: usize,
    guess: Vec<Complex64>,
}

struct Eval {
    snap: Snapshot,
    t_ele: f64,
    t_load: f64,
    rate: f64,
}

impl Model<'_> {
    fn eval(&mut self, slip: f64) -> Result<Eval, SnapshotError> {
        let s = slip.clamp(1e-6, 1.0);
        let op = plan_operation(self.plan, s);
        let snap = network_snapshot(self.case, &self.order, &op, Some(s), Some(&self.guess))?;
        self.guess.clone_from(&snap.v);
        let vm2 = snap.v[self.motor_bus].norm_sqr();
        let t_ele = torque_gain(&self.motor, s).expect("slip clamped into (0, 1]") * vm2;
        let t_load = load_torque(&self.motor, &self.case.motor.mech_load, s);
        let mut rate = -(t_ele - t_load) / (2.0 * self.motor.h);
        if slip >= 1.0 && rate > 0.0 {
            rate = 0.0;
        }
        Ok(Eval {
            snap,
            t_ele,
            t_load,
            rate,
        })
    }
}

/// Integrates the start from standstill with the plan applied.
pub fn simulate_start(case: &NetworkCase, plan: &RestorationPlan, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    if !(cfg.dt > 0.0 && cfg.t_end > 0.0) {
        return Err(SimError::Config("dt and t_end must be positive".into()));
    }
    let order = radial_order(case);
    let motor = case.motor_model();
    let motor_bus = case.motor_bus();
    let armed: Vec<usize> = (0..case.buses.len())
        .filter(|&b| {
            let bus = &case.buses[b];
            let here: Vec<_> = plan.loads.iter().filter(|l| l.bus == bus.id).collect();
            bus.has_undervoltage_protection && !(here.len() == 1 && here[0].decision && !here[0].energized)
        })
        .collect();
    let lines: Vec<usize> = order
        .lines
        .iter()
        .map(|ol| ol.line)
        .filter(|&l| case.lines[l].has_overcurrent_protection)
        .collect();
    let uv = case.curve(CurveKind::Undervoltage).clone();
    let oc = case.curve(CurveKind::Overcurrent).clone();

    let mut model = Model {
        case,
        plan,
        order,
        motor,
        motor_bus,
        guess: vec![Complex64::new(case.bases.v_substation_sq.sqrt(), 0.0); case.buses.len()],
    };
    let scale = case.motor_power_scale();
    let record = |t: f64, slip: f64, e: &Eval| Sample {
        t,
        slip,
        v_motor: e.snap.v[motor_bus].norm(),
        i_motor: e.snap.v[motor_bus].norm() * scale / input_impedance_complex(&motor, slip.clamp(1e-6, 1.0)).norm(),
        t_ele: e.t_ele,
        t_load: e.t_load,
        v_protected: armed.iter().map(|&b| e.snap.v[b].norm()).collect(),
        i_protected: lines.iter().map(|&l| e.snap.i_line[l].norm()).collect(),
    };
    let check_trips = |t: f64, e: &Eval| -> Option<Event> {
        let floor = uv.limit_at(t);
        for &b in &armed {
            let v2 = e.snap.v[b].norm_sqr();
            if v2 < floor {
                return Some(Event {
                    t,
                    kind: EventKind::Trip {
                        location: format!("bus {}", case.buses[b].id),
                        quantity: v2,
                        limit: floor,
                    },
                });
            }
        }
        let mult = oc.limit_at(t);
        for &l in &lines {
            let f = e.snap.i_line[l].norm_sqr();
            let lim = case.lines[l].ampacity_sq * mult;
            if f > lim {
                return Some(Event {
                    t,
                    kind: EventKind::Trip {
                        location: format!("line {}", case.lines[l].label()),
                        quantity: f,
                        limit: lim,
                    },
                });
            }
        }
        None
    };
    let snap_err = |t: f64| move |source| SimError::Snapshot { t, source };

    let stall_above = plan.grid.s_end + 2.0 * plan.grid.delta_s;
    let mut t = 0.0;
    let mut slip = 1.0;
    let mut events = vec![Event {
        t,
        kind: EventKind::Energization,
    }];
    let mut cur = model.eval(slip).map_err(snap_err(t))?;
    let mut samples = vec![record(t, slip, &cur)];
    let mut residual = cur.snap.energy_residual();
    if let Some(ev) = check_trips(t, &cur) {
        events.push(ev);
        return Ok(finish(case, &armed, &lines, samples, events, residual, Outcome::Tripped));
    }
    let mut stall_time = 0.0;
    let mut steady_time = 0.0;
    let n_steps = (cfg.t_end / cfg.dt).ceil() as usize;
    for n in 1..=n_steps {
        let h = cfg.dt;
        let next = match cfg.integrator {
            Integrator::Rk4 => {
                let k1 = cur.rate;
                let k2 = model.eval(slip + 0.5 * h * k1).map_err(snap_err(t))?.rate;
                let k3 = model.eval(slip + 0.5 * h * k2).map_err(snap_err(t))?.rate;
                let k4 = model.eval(slip + h * k3).map_err(snap_err(t))?.rate;
                slip + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
            Integrator::Trapezoidal => {
                let mut s = slip + h * cur.rate;
                for _ in 0..50 {
                    let r = model.eval(s.min(1.0)).map_err(snap_err(t))?.rate;
                    let ns = slip + 0.5 * h * (cur.rate + r);
                    let done = (ns - s).abs() <= 1e-14;
                    s = ns;
                    if done {
                        break;
                    }
                }
                s
            }
        };
        slip = next.clamp(1e-6, 1.0);
        t = n as f64 * h;
        cur = model.eval(slip).map_err(snap_err(t))?;
        samples.push(record(t, slip, &cur));
        residual = residual.max(cur.snap.energy_residual());
        if let Some(ev) = check_trips(t, &cur) {
            events.push(ev);
            return Ok(finish(case, &armed, &lines, samples, events, residual, Outcome::Tripped));
        }
        if slip > stall_above {
            steady_time = 0.0;
            if -cur.rate <= cfg.stall_rate {
                stall_time += h;
                if stall_time >= cfg.stall_window - 1e-12 {
                    events.push(Event {
                        t,
                        kind: EventKind::Stall { slip },
                    });
                    return Ok(finish(case, &armed, &lines, samples, events, residual, Outcome::Stalled));
                }
            } else {
                stall_time = 0.0;
            }
        } else if cur.rate.abs() <= cfg.steady_rate {
            steady_time += h;
            if steady_time >= cfg.steady_window - 1e-12 {
                events.push(Event {
                    t,
                    kind: EventKind::SteadyState { slip },
                });
                return Ok(finish(case, &armed, &lines, samples, events, residual, Outcome::Started));
            }
        } else {
            steady_time = 0.0;
        }
    }
    events.push(Event {
        t,
        kind: EventKind::Horizon { slip },
    });
    Ok(finish(case, &armed, &lines, samples, events, residual, Outcome::Horizon))
}

fn finish(
    case: &NetworkCase,
    armed: &[usize],
    lines: &[usize],
    samples: Vec<Sample>,
    events: Vec<Event>,
    max_energy_residual: f64,
    outcome: Outcome,
) -> Trajectory {
    Trajectory {
        protected_buses: armed.iter().map(|&b| case.buses[b].id).collect(),
        protected_lines: lines
            .iter()
            .map(|&l| (case.lines[l].label(), case.lines[l].ampacity_sq))
            .collect(),
        samples,
        events,
        outcome,
        max_energy_residual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginEntry {
    pub location: String,
    pub kind: CurveKind,
    /// Smallest distance to the limit on the safe side, in squared units.
    pub min_margin: f64,
    pub at_time: f64,
    pub tripped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub entries: Vec<MarginEntry>,
}

impl MarginReport {
    pub fn any_trip(&self) -> bool {
        self.entries.iter().any(|e| e.tripped)
    }

    pub fn worst(&self, kind: CurveKind) -> Option<&MarginEntry> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .min_by(|a, b| a.min_margin.total_cmp(&b.min_margin))
    }
}

/// Per relay, the smallest margin over the trajectory: `|V|^2 - floor(t)`
/// for under-voltage and `F_th mult(t) - |I|^2` for over-current.
pub fn verify_protection(traj: &Trajectory, case: &NetworkCase) -> MarginReport {
    let uv = case.curve(CurveKind::Undervoltage);
    let oc = case.curve(CurveKind::Overcurrent);
    let mut entries = Vec::new();
    for (j, b) in traj.protected_buses.iter().enumerate() {
        let (m, t) = traj
            .samples
            .iter()
            .map(|s| (s.v_protected[j].powi(2) - uv.limit_at(s.t), s.t))
            .fold((f64::INFINITY, 0.0), |a, x| if x.0 < a.0 { x } else { a });
        entries.push(MarginEntry {
            location: format!("bus {b}"),
            kind: CurveKind::Undervoltage,
            min_margin: m,
            at_time: t,
            tripped: m < 0.0,
        });
    }
    for (j, (l, f_th)) in traj.protected_lines.iter().enumerate() {
        let (m, t) = traj
            .samples
            .iter()
            .map(|s| (f_th * oc.limit_at(s.t) - s.i_protected[j].powi(2), s.t))
            .fold((f64::INFINITY, 0.0), |a, x| if x.0 < a.0 { x } else { a });
        entries.push(MarginEntry {
            location: format!("line {l}"),
            kind: CurveKind::Overcurrent,
            min_margin: m,
            at_time: t,
            tripped: m < 0.0,
        });
    }
    MarginReport { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDeviation {
    pub k: usize,
    /// Plan's time of reaching the step's slip [s].
    pub t_plan: f64,
    /// Simulated time of reaching the same slip.
    pub t_sim: Option<f64>,
    pub timing_dev: Option<f64>,
    /// Motor voltage magnitudes [p.u.]: plan, and simulator at `t_plan`.
    pub v_plan: f64,
    pub v_sim: Option<f64>,
    pub v_dev: Option<f64>,
    /// Largest relative current deviation over protected lines at `t_plan`.
    pub i_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub steps: Vec<StepDeviation>,
    pub max_voltage_dev: f64,
    pub max_timing_dev: f64,
    pub max_current_dev: f64,
    /// The trajectory ended before the plan's last step.
    pub partial: bool,
}

pub fn compare_with_plan(traj: &Trajectory, plan: &RestorationPlan, case: &NetworkCase) -> Comparison {
    let mb = case.motor_bus();
    let mut steps = Vec::new();
    let mut partial = false;
    for st in &plan.steps {
        let v_plan = st.v[mb].sqrt();
        let v_sim = traj.at(st.t, |s| s.v_motor);
        let t_sim = traj.time_at_slip(st.slip);
        if v_sim.is_none() || t_sim.is_none() {
            partial = true;
        }
        let mut i_dev: Option<f64> = None;
        for (j, (label, _)) in traj.protected_lines.iter().enumerate() {
            let Some(li) = plan.line_labels.iter().position(|l| l == label) else {
                continue;
            };
            let i_plan = st.f[li].max(0.0).sqrt();
            if let Some(i_sim) = traj.at(st.t, |s| s.i_protected[j]) {
                if i_plan > 0.0 {
                    let d = (i_sim - i_plan).abs() / i_plan;
                    i_dev = Some(i_dev.map_or(d, |x: f64| x.max(d)));
                }
            }
        }
        steps.push(StepDeviation {
            k: st.k,
            t_plan: st.t,
            t_sim,
            timing_dev: t_sim.map(|ts| if st.t > 0.0 { (ts - st.t).abs() / st.t } else { ts.abs() }),
            v_plan,
            v_sim,
            v_dev: v_sim.map(|vs| (vs - v_plan).abs() / v_plan),
            i_dev,
        });
    }
    let max_of = |f: &dyn Fn(&StepDeviation) -> Option<f64>| steps.iter().filter_map(f).fold(0.0, f64::max);
    Comparison {
        max_voltage_dev: max_of(&|s| s.v_dev),
        max_timing_dev: max_of(&|s| s.timing_dev),
        max_current_dev: max_of(&|s| s.i_dev),
        steps,
        partial,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub voltage: f64,
    pub timing: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            voltage: 0.05,
            timing: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub outcome: Outcome,
    pub reasons: Vec<String>,
    pub margins: MarginReport,
    pub comparison: Comparison,
}

/// PASS iff the motor reaches steady state without trips and the plan
/// tracks the simulation within the thresholds.
pub fn verdict(traj: &Trajectory, plan: &RestorationPlan, case: &NetworkCase, th: &Thresholds) -> Verdict {
    let margins = verify_protection(traj, case);
    let comparison = compare_with_plan(traj, plan, case);
    let mut reasons = Vec::new();
    match traj.outcome {
        Outcome::Started => {}
        Outcome::Stalled => reasons.push("motor stalled".to_string()),
        Outcome::Tripped => reasons.push("protection tripped".to_string()),
        Outcome::Horizon => reasons.push("motor did not settle before the horizon".to_string()),
    }
    for e in margins.entries.iter().filter(|e| e.tripped) {
        reasons.push(format!("negative margin {:.6} at {} (t = {:.4} s)", e.min_margin, e.location, e.at_time));
    }
    if comparison.partial {
        reasons.push("trajectory ended before the plan's last step".into());
    }
    if comparison.max_voltage_dev > th.voltage {
        reasons.push(format!("motor voltage deviation {:.4} exceeds {:.4}", comparison.max_voltage_dev, th.voltage));
    }
    if comparison.max_timing_dev > th.timing {
        reasons.push(format!("timing deviation {:.4} exceeds {:.4}", comparison.max_timing_dev, th.timing));
    }
    Verdict {
        pass: reasons.is_empty(),
        outcome: traj.outcome,
        reasons,
        margins,
        comparison,
    }
}
