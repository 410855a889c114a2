#![allow(dead_code)]

use motorstart::network::{load_case, NetworkCase};
use motorstart::restoration::{build_for_case, decode, BuildOptions, RestorationPlan, RestorationProblem};
use motorstart::solver::bnb::{solve_misocp, BnbResult, Budget};
use motorstart::linearize::{sos2_branch, Sos2Branch};
use motorstart::motor::MotorModel;
use motorstart::program::{ConicProgram, Family, LinExpr, Sense, VarId};
use motorstart::solver::socp::{solve_socp, SocpSettings, SolveStatus};
use num_complex::Complex64;
use serde_json::Value;

pub fn data(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn case(name: &str) -> NetworkCase {
    load_case(&data(name)).unwrap()
}

/// A bundled case with its JSON edited before loading.
pub fn edited(name: &str, f: impl FnOnce(&mut Value)) -> NetworkCase {
    let mut v: Value = serde_json::from_str(&data(name)).unwrap();
    f(&mut v);
    load_case(&v.to_string()).unwrap()
}

pub struct Solved {
    pub problem: RestorationProblem,
    pub result: BnbResult,
    pub plan: RestorationPlan,
}

pub fn solve(case: &NetworkCase) -> Solved {
    solve_with(case, &BuildOptions::from_case(case))
}

pub fn solve_with(case: &NetworkCase, opts: &BuildOptions) -> Solved {
    let problem = build_for_case(case, opts).unwrap();
    let result = solve_misocp(&problem.program, &Budget::default());
    let plan = decode(&problem, case, &result.incumbent.as_ref().expect("feasible").x).unwrap();
    Solved { problem, result, plan }
}

/// Air-gap power at 1 p.u. terminal voltage from the full circuit.
pub fn air_gap_torque(m: &MotorModel, s: f64) -> f64 {
    let zs = Complex64::new(m.r_s, m.x_ls);
    let zm = Complex64::new(0.0, m.x_m);
    let zr = Complex64::new(m.r_r / s, m.x_lr);
    let i_s = Complex64::new(1.0, 0.0) / (zs + zm * zr / (zm + zr));
    let i_r = i_s * zm / (zm + zr);
    i_r.norm_sqr() * m.r_r / s
}

pub const R: f64 = 0.1;
pub const X: f64 = 0.1;
pub const PL: f64 = 0.5;
pub const QL: f64 = 0.2;

/// Newton on the exact two-bus branch-flow equations; returns `(V2, F)`.
pub fn newton_two_bus(v1: f64) -> (f64, f64) {
    let (mut v2, mut f) = (v1, 0.0);
    for _ in 0..50 {
        let p = PL + R * f;
        let q = QL + X * f;
        let g1 = v2 - v1 + 2.0 * (R * p + X * q) - (R * R + X * X) * f;
        let g2 = f * v1 - p * p - q * q;
        // Jacobian [[1, r^2 + x^2], [0, v1 - 2pr - 2qx]].
        let j22 = v1 - 2.0 * p * R - 2.0 * q * X;
        let df = -g2 / j22;
        let dv = -g1 - (R * R + X * X) * df;
        v2 += dv;
        f += df;
        if dv.abs().max(df.abs()) < 1e-15 {
            break;
        }
    }
    (v2, f)
}

/// Two-bus branch-flow relaxation minimizing losses; returns `(program, V2, F)`.
pub fn two_bus_program() -> (ConicProgram, VarId, VarId) {
    let mut p = ConicProgram::new();
    let v1 = p.add_var("V1", 1.0, 1.0);
    let v2 = p.add_var("V2", 0.25, 1.21);
    let pf = p.add_var("p", -10.0, 10.0);
    let qf = p.add_var("q", -10.0, 10.0);
    let f = p.add_var("F", 0.0, 100.0);
    p.add_row(
        LinExpr::var(v2).add(v1, -1.0).add(pf, 2.0 * R).add(qf, 2.0 * X).add(f, -(R * R + X * X)),
        Sense::Eq,
        Family::Voltage,
        "voltage",
    );
    p.add_row(LinExpr::var(pf).add(f, -R).plus(-PL), Sense::Eq, Family::BalanceP, "p");
    p.add_row(LinExpr::var(qf).add(f, -X).plus(-QL), Sense::Eq, Family::BalanceQ, "q");
    p.add_cone(
        vec![LinExpr::new().add(pf, 2.0), LinExpr::new().add(qf, 2.0), LinExpr::var(f).add(v1, -1.0)],
        LinExpr::var(f).add(v1, 1.0),
        Family::LineCurrent,
        "line",
        1.0,
    );
    p.objective = LinExpr::new().add(f, R);
    (p, v2, f)
}

/// Best objective over every on/off pattern of `status`, the winning bit
/// mask and how many patterns needed a search over the ordered sets.
pub fn enumerate_patterns(program: &ConicProgram, status: &[VarId]) -> (f64, u32, usize) {
    let mut best: Option<(f64, u32)> = None;
    let mut sos2_fallbacks = 0;
    for mask in 0u32..64 {
        let mut p = program.clone();
        for (i, v) in status.iter().enumerate() {
            let on = f64::from((mask >> i) & 1);
            p.vars[v.0].lb = on;
            p.vars[v.0].ub = on;
        }
        let sol = solve_socp(&p, &SocpSettings::default());
        let obj = match sol.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Optimal => {
                let ordered = p.sos2.iter().all(|s| {
                    let lam: Vec<f64> = s.vars.iter().map(|v| sol.x[v.0]).collect();
                    sos2_branch(&lam) == Sos2Branch::Feasible
                });
                if ordered {
                    sol.objective
                } else {
                    // Fixed pattern whose relaxation spreads a protection
                    // block: settle the ordering conditions by search.
                    sos2_fallbacks += 1;
                    let r = solve_misocp(&p, &Budget::default());
                    match r.incumbent {
                        Some(i) => i.objective,
                        None => continue,
                    }
                }
            }
            s => panic!("pattern {mask:06b}: {s:?}"),
        };
        if best.map_or(true, |(b, _)| obj < b - 1e-12) {
            best = Some((obj, mask));
        }
    }
    let (obj, mask) = best.expect("some pattern is feasible");
    (obj, mask, sos2_fallbacks)
}
