//! Semi-static induction motor model.
//!
//! The acceleration is split into `K_max` slip steps of equal length; inside
//! a step the slip is frozen, so every circuit quantity becomes a constant
//! and the electrical torque is linear in the squared terminal voltage.
//!
//! Units: impedances in p.u. of the motor base, torque in p.u. of
//! `S_base / w_sync` (so air-gap power and torque coincide in p.u.),
//! voltage `V` always means the *squared* terminal voltage magnitude.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    pub r_s: f64,
    pub x_ls: f64,
    pub r_r: f64,
    pub x_lr: f64,
    pub x_m: f64,
    /// Inertia constant [s].
    pub h: f64,
    /// Friction and windage coefficient [p.u. torque].
    pub k_d: f64,
}

impl MotorModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.x_ls > 0.0
            && self.x_lr > 0.0
            && self.x_m > 0.0
            && self.r_s >= 0.0
            && self.r_r > 0.0
            && self.h > 0.0
            && self.k_d >= 0.0;
        if ok {
            Ok(())
        } else {
            Err("need reactances > 0, R_s >= 0, R_r > 0, H > 0, K_D >= 0".into())
        }
    }

    pub fn with_inertia(mut self, h: f64) -> Self {
        self.h = h;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechLoadKind {
    Linear,
    Constant,
}

/// Torque-speed curve of the driven machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechLoad {
    pub kind: MechLoadKind,
    pub t_nom: f64,
}

impl MechLoad {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_nom >= 0.0 {
            Ok(())
        } else {
            Err("t_nom must be >= 0".into())
        }
    }
}

/// Mechanical torque on the shaft at slip `s`.
pub fn mech_torque(load: &MechLoad, s: f64) -> f64 {
    match load.kind {
        MechLoadKind::Linear => load.t_nom * (1.0 - s),
        MechLoadKind::Constant => load.t_nom,
    }
}

/// Mechanical plus friction/windage torque.
pub fn load_torque(motor: &MotorModel, load: &MechLoad, s: f64) -> f64 {
    mech_torque(load, s) + motor.k_d * (1.0 - s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thevenin {
    /// |V_th|^2 / |V_s|^2.
    pub v_gain: f64,
    pub r_th: f64,
    pub x_th: f64,
}

/// Stator side reduced to a Thevenin source seen from the rotor terminals.
pub fn thevenin_params(motor: &MotorModel) -> Thevenin {
    let zm = Complex64::new(0.0, motor.x_m);
    let zs = Complex64::new(motor.r_s, motor.x_ls);
    let denom = zs + zm;
    let gain = zm / denom;
    let zth = zm * zs / denom;
    Thevenin {
        v_gain: gain.norm_sqr(),
        r_th: zth.re,
        x_th: zth.im,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("slip must lie in (0, 1], got {0}")]
pub struct SlipError(pub f64);

fn check_slip(s: f64) -> Result<(), SlipError> {
    if s > 0.0 && s <= 1.0 {
        Ok(())
    } else {
        Err(SlipError(s))
    }
}

/// `c` such that the electrical torque is `c * V` with `V` the squared
/// terminal voltage.
pub fn torque_gain(motor: &MotorModel, s: f64) -> Result<f64, SlipError> {
    check_slip(s)?;
    Ok(torque_gain_unchecked(&thevenin_params(motor), motor, s))
}

fn torque_gain_unchecked(th: &Thevenin, motor: &MotorModel, s: f64) -> f64 {
    let rr = motor.r_r / s;
    th.v_gain * rr / ((rr + th.r_th).powi(2) + (motor.x_lr + th.x_th).powi(2))
}

/// Motor input impedance `(R_T, X_T)` at slip `s`.
pub fn input_impedance(motor: &MotorModel, s: f64) -> Result<(f64, f64), SlipError> {
    check_slip(s)?;
    let z = input_impedance_complex(motor, s);
    Ok((z.re, z.im))
}

pub(crate) fn input_impedance_complex(motor: &MotorModel, s: f64) -> Complex64 {
    let zr = Complex64::new(motor.r_r / s, motor.x_lr);
    let zm = Complex64::new(0.0, motor.x_m);
    Complex64::new(motor.r_s, motor.x_ls) + zm * zr / (zr + zm)
}

/// Slip discretization of the acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipGrid {
    /// Descending slips, `steps[0] == 1`.
    pub steps: Vec<f64>,
    pub delta_s: f64,
    /// Slip at the end of the last step.
    pub s_end: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid needs at least one step")]
    NoSteps,
    #[error("step length {0} would drive the slip to or below zero")]
    TooLong(f64),
    #[error("no stable operating point: electrical torque never meets the load torque at rated voltage")]
    NoEquilibrium,
}

impl SlipGrid {
    /// `k_max` steps starting at standstill with step length `delta_s`.
    pub fn uniform(k_max: usize, delta_s: f64) -> Result<Self, GridError> {
        if k_max == 0 {
            return Err(GridError::NoSteps);
        }
        let s_end = 1.0 - k_max as f64 * delta_s;
        if !(delta_s > 0.0) || s_end <= 0.0 {
            return Err(GridError::TooLong(delta_s));
        }
        let steps = (0..k_max).map(|k| 1.0 - k as f64 * delta_s).collect();
        Ok(SlipGrid { steps, delta_s, s_end })
    }

    /// Divides `[s_end, 1]` into `k_max` steps.
    pub fn to_end(k_max: usize, s_end: f64) -> Result<Self, GridError> {
        if k_max == 0 {
            return Err(GridError::NoSteps);
        }
        SlipGrid::uniform(k_max, (1.0 - s_end) / k_max as f64)
    }

    /// Default grid: the last step ends one step short of the stable
    /// equilibrium at rated voltage, so `S_end = s_eq + dS` and
    /// `dS = (1 - s_eq) / (K_max + 1)`.
    pub fn standard(motor: &MotorModel, load: &MechLoad, k_max: usize) -> Result<Self, GridError> {
        if k_max == 0 {
            return Err(GridError::NoSteps);
        }
        let s_eq = equilibrium_slip(motor, load, 1.0).ok_or(GridError::NoEquilibrium)?;
        SlipGrid::uniform(k_max, (1.0 - s_eq) / (k_max as f64 + 1.0))
    }

    pub fn k_max(&self) -> usize {
        self.steps.len()
    }

    /// Slip at the end of step `k` (0-based).
    pub fn step_end(&self, k: usize) -> f64 {
        self.steps[k] - self.delta_s
    }
}

/// Stable equilibrium slip where `c(s) V = T_load(s)`: the smallest root,
/// approached from the low-slip side where the load torque dominates.
pub fn equilibrium_slip(motor: &MotorModel, load: &MechLoad, v_sq: f64) -> Option<f64> {
    let th = thevenin_params(motor);
    let g = |s: f64| torque_gain_unchecked(&th, motor, s) * v_sq - load_torque(motor, load, s);
    let mut lo = 1e-9;
    if g(lo) >= 0.0 {
        return Some(lo);
    }
    let n = 10_000;
    let mut hi = None;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        if g(s) >= 0.0 {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Per-step constants of the semi-static model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCoeffs {
    /// 0-based step index.
    pub k: usize,
    pub slip: f64,
    /// Electrical torque per unit squared voltage.
    pub torque_gain: f64,
    pub r_t: f64,
    pub x_t: f64,
    pub mech_torque: f64,
    /// `K_D (1 - S_k)`.
    pub friction_torque: f64,
    /// `1 / (2 H dS)`; `1/dt_k = inv_dt_gain * T_acc`.
    pub inv_dt_gain: f64,
}

impl StepCoeffs {
    pub fn load_torque(&self) -> f64 {
        self.mech_torque + self.friction_torque
    }

    pub fn accel_torque(&self, v_sq: f64) -> f64 {
        self.torque_gain * v_sq - self.load_torque()
    }

    /// `1/dt_k` at squared voltage `v_sq`.
    pub fn inv_dt(&self, v_sq: f64) -> f64 {
        self.inv_dt_gain * self.accel_torque(v_sq)
    }

    /// Motor admittance terms `R_T/|Z|^2` and `X_T/|Z|^2` (motor base).
    pub fn power_per_v(&self) -> (f64, f64) {
        let z2 = self.r_t * self.r_t + self.x_t * self.x_t;
        (self.r_t / z2, self.x_t / z2)
    }
}

pub fn step_coeffs(motor: &MotorModel, load: &MechLoad, grid: &SlipGrid) -> Vec<StepCoeffs> {
    let th = thevenin_params(motor);
    let inv_dt_gain = 1.0 / (2.0 * motor.h * grid.delta_s);
    grid.steps
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let z = input_impedance_complex(motor, s);
            StepCoeffs {
                k,
                slip: s,
                torque_gain: torque_gain_unchecked(&th, motor, s),
                r_t: z.re,
                x_t: z.im,
                mech_torque: mech_torque(load, s),
                friction_torque: motor.k_d * (1.0 - s),
                inv_dt_gain,
            }
        })
        .collect()
}

/// Acceleration times `t_k`, the time at which the slip reaches `S_k`
/// (so `t_1 = 0`), for per-step squared voltages; `None` when a step has
/// non-positive accelerating torque.
pub fn acceleration_times(coeffs: &[StepCoeffs], v_sq: &[f64]) -> Option<Vec<f64>> {
    let mut t = 0.0;
    coeffs
        .iter()
        .zip(v_sq)
        .map(|(c, &v)| {
            let inv = c.inv_dt(v);
            if inv > 0.0 {
                let start = t;
                t += 1.0 / inv;
                Some(start)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The bundled 4 kW / 400 V machine.
    pub(crate) fn table1() -> MotorModel {
        let z = 400.0 * 400.0 / 4000.0;
        MotorModel {
            r_s: 1.44 / z,
            x_ls: 2.56 / z,
            r_r: 1.37 / z,
            x_lr: 2.56 / z,
            x_m: 56.17 / z,
            h: 0.198,
            k_d: 0.0,
        }
    }

    /// Independent circuit solve: drive the full circuit with `V` and
    /// return (rotor air-gap power, complex input power).
    fn circuit(m: &MotorModel, s: f64, v_sq: f64) -> (f64, Complex64) {
        let v = Complex64::new(v_sq.sqrt(), 0.0);
        let zs = Complex64::new(m.r_s, m.x_ls);
        let zr = Complex64::new(m.r_r / s, m.x_lr);
        let zm = Complex64::new(0.0, m.x_m);
        let i_s = v / (zs + 1.0 / (1.0 / zm + 1.0 / zr));
        let v_ag = v - i_s * zs;
        let i_r = v_ag / zr;
        (i_r.norm_sqr() * m.r_r / s, v * i_s.conj())
    }

    #[test]
    fn lossless_stator_limit() {
        let mut m = table1();
        m.r_s = 0.0;
        let th = thevenin_params(&m);
        assert!(th.r_th.abs() < 1e-15);
        let xth = m.x_ls * m.x_m / (m.x_ls + m.x_m);
        assert!((th.x_th - xth).abs() < 1e-15);
        let g = (m.x_m / (m.x_ls + m.x_m)).powi(2);
        assert!((th.v_gain - g).abs() < 1e-15);
    }

    #[test]
    fn ideal_magnetizing_branch() {
        let mut m = table1();
        m.x_m = 1e9;
        let th = thevenin_params(&m);
        assert!((th.v_gain - 1.0).abs() < 1e-6);
        assert!((th.r_th - m.r_s).abs() < 1e-6);
        assert!((th.x_th - m.x_ls).abs() < 1e-6);
        let (r, x) = input_impedance(&m, 1.0).unwrap();
        assert!((r - (m.r_s + m.r_r)).abs() < 1e-6);
        assert!((x - (m.x_ls + m.x_lr)).abs() < 1e-6);
    }

    #[test]
    fn table1_thevenin_matches_direct_reduction() {
        let m = table1();
        let th = thevenin_params(&m);
        // Oracle: open-circuit voltage divider and parallel impedance by hand.
        let (a, b) = (m.r_s, m.x_ls + m.x_m);
        let d = a * a + b * b;
        let v_gain = m.x_m * m.x_m / d;
        let r_th = m.x_m * m.x_m * m.r_s / d;
        let x_th = m.x_m * (m.r_s * m.r_s + m.x_ls * (m.x_ls + m.x_m)) / d;
        assert!((th.v_gain - v_gain).abs() < 1e-12);
        assert!((th.r_th - r_th).abs() < 1e-12);
        assert!((th.x_th - x_th).abs() < 1e-12);
    }

    #[test]
    fn standstill_torque_matches_circuit() {
        let m = table1();
        let c = torque_gain(&m, 1.0).unwrap();
        let (p_ag, _) = circuit(&m, 1.0, 1.0);
        assert!((c - p_ag).abs() <= 1e-9 * p_ag);
        assert_eq!(c * 0.0, 0.0);
    }

    #[test]
    fn breakdown_torque_exceeds_starting_torque() {
        let m = table1();
        let th = thevenin_params(&m);
        let s_bd = m.r_r / (th.r_th.powi(2) + (m.x_lr + th.x_th).powi(2)).sqrt();
        assert!(torque_gain(&m, 1.0).unwrap() < torque_gain(&m, s_bd).unwrap());
    }

    #[test]
    fn input_power_matches_circuit() {
        let m = table1();
        let (r, x) = input_impedance(&m, 1.0).unwrap();
        let z2 = r * r + x * x;
        let (_, s_in) = circuit(&m, 1.0, 1.0);
        assert!((s_in.re - r / z2).abs() < 1e-9);
        assert!((s_in.im - x / z2).abs() < 1e-9);
    }

    #[test]
    fn air_gap_power_from_input_side_matches_torque() {
        let m = table1();
        let grid = SlipGrid::standard(&m, &MechLoad { kind: MechLoadKind::Linear, t_nom: 2.0 }, 20).unwrap();
        for &s in &grid.steps {
            // Input power minus stator copper loss is the air-gap power.
            let z = input_impedance_complex(&m, s);
            let i2 = 1.0 / z.norm_sqr();
            let p_in = z.re * i2;
            let p_ag = p_in - i2 * m.r_s;
            let c = torque_gain(&m, s).unwrap();
            assert!((p_ag - c).abs() <= 1e-9 * c, "s={s}: {p_ag} vs {c}");
        }
    }

    #[test]
    fn rejects_nonpositive_slip() {
        let m = table1();
        assert!(torque_gain(&m, 0.0).is_err());
        assert!(input_impedance(&m, -0.1).is_err());
        assert!(torque_gain(&m, 1.5).is_err());
    }

    #[test]
    fn mechanical_curves() {
        let lin = MechLoad { kind: MechLoadKind::Linear, t_nom: 2.0 };
        assert_eq!(mech_torque(&lin, 1.0), 0.0);
        assert_eq!(mech_torque(&lin, 0.5), 1.0);
        let cst = MechLoad { kind: MechLoadKind::Constant, t_nom: 0.95 };
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(mech_torque(&cst, s), 0.95);
        }
    }

    #[test]
    fn single_step_grid() {
        let g = SlipGrid::uniform(1, 0.05).unwrap();
        assert_eq!(g.steps, vec![1.0]);
        let m = table1();
        let c = step_coeffs(&m, &MechLoad { kind: MechLoadKind::Linear, t_nom: 2.0 }, &g);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].slip, 1.0);
    }

    #[test]
    fn inv_dt_gain_for_table1_inertia() {
        let m = table1();
        let g = SlipGrid::uniform(10, 0.05).unwrap();
        let c = step_coeffs(&m, &MechLoad { kind: MechLoadKind::Linear, t_nom: 2.0 }, &g);
        let expected = 1.0 / (2.0 * 0.198 * 0.05);
        assert!((c[0].inv_dt_gain - expected).abs() < 1e-12);
        assert!((expected - 50.505_050_505).abs() < 1e-6);
    }

    #[test]
    fn grid_invariants() {
        let m = table1();
        for load in [
            MechLoad { kind: MechLoadKind::Linear, t_nom: 2.0 },
            MechLoad { kind: MechLoadKind::Constant, t_nom: 0.95 },
        ] {
            let g = SlipGrid::standard(&m, &load, 20).unwrap();
            assert_eq!(g.steps[0], 1.0);
            for w in g.steps.windows(2) {
                assert!((w[0] - w[1] - g.delta_s).abs() < 1e-12);
            }
            assert!(*g.steps.last().unwrap() >= g.s_end && g.s_end > 0.0);
            let s_eq = equilibrium_slip(&m, &load, 1.0).unwrap();
            assert!((g.s_end - s_eq - g.delta_s).abs() < 1e-12);
            let coeffs = step_coeffs(&m, &load, &g);
            for c in &coeffs {
                assert!(c.torque_gain > 0.0 && c.r_t > 0.0);
                // Every step accelerates at rated voltage.
                assert!(c.accel_torque(1.0) > 0.0);
            }
        }
    }

    #[test]
    fn inverse_step_time_is_linear_in_voltage() {
        let m = table1();
        let load = MechLoad { kind: MechLoadKind::Constant, t_nom: 0.95 };
        let g = SlipGrid::standard(&m, &load, 20).unwrap();
        for c in step_coeffs(&m, &load, &g) {
            let v = 0.8;
            let d = c.inv_dt(2.0 * v) - c.inv_dt(v);
            assert!((d - c.inv_dt_gain * c.torque_gain * v).abs() < 1e-9);
        }
    }
}
