//! Checks against independent oracles: direct circuit solves, Newton on the
//! branch-flow equations, exhaustive enumeration and step halving.

mod common;

use common::{PL, QL, R, X};

use motorstart::motor::{acceleration_times, step_coeffs, torque_gain, MotorModel, SlipGrid};
use motorstart::network::radial_order;
use motorstart::program::LinExpr;
use motorstart::restoration::{build_for_case, BuildOptions};
use motorstart::sim::{network_snapshot, simulate_start, Operation, SimConfig};
use motorstart::solver::bnb::{check_cone_tightness, solve_misocp, BnbStatus, Budget};
use motorstart::solver::socp::{solve_socp, SocpSettings, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn torque_gain_matches_air_gap_power_on_random_motors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut motors = vec![common::case("degenerate.json").motor_model()];
    for _ in 0..100 {
        motors.push(MotorModel {
            r_s: rng.gen_range(0.002..0.1),
            x_ls: rng.gen_range(0.01..0.25),
            r_r: rng.gen_range(0.002..0.1),
            x_lr: rng.gen_range(0.01..0.25),
            x_m: rng.gen_range(0.8..6.0),
            h: rng.gen_range(0.05..3.0),
            k_d: 0.0,
        });
    }
    for m in &motors {
        for _ in 0..5 {
            let s: f64 = rng.gen_range(1e-3..=1.0);
            let a = torque_gain(m, s).unwrap();
            let b = common::air_gap_torque(m, s);
            assert!((a - b).abs() <= 1e-9 * b, "{m:?} s={s}: {a} vs {b}");
        }
    }
}

#[test]
fn socp_two_bus_matches_newton() {
    let (p, v2, f) = common::two_bus_program();
    let t0 = std::time::Instant::now();
    let sol = solve_socp(&p, &SocpSettings::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    let (v2n, fn_) = common::newton_two_bus(1.0);
    assert!((sol.x[v2.0] - v2n).abs() < 1e-6, "{} vs {v2n}", sol.x[v2.0]);
    assert!((sol.x[f.0] * R - fn_ * R).abs() < 1e-6);
    assert!(check_cone_tightness(&p, &sol.x) <= 1e-7);
    assert!(sol.residuals.complementarity <= 1e-6);
    assert!(t0.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn sweep_two_bus_matches_newton() {
    let case = common::edited("degenerate.json", |v| {
        v["buses"] = json!([{"id": 1, "is_substation": true}, {"id": 2}]);
        v["lines"] = json!([{"from": 1, "to": 2, "r": R, "x": X, "ampacity_sq": 16.0}]);
        v["loads"] = json!([
            {"bus": 2, "P0": PL, "Q0": QL, "kind": "static", "kp": 0.0, "kq": 0.0},
            {"bus": 2, "P0": 0.5, "Q0": 0.25, "kind": "motor_restart"}
        ]);
    });
    let mut op = Operation::all_on(&case);
    op.energized[1] = false;
    let s = network_snapshot(&case, &radial_order(&case), &op, None, None).unwrap();
    let (v2n, fn_) = common::newton_two_bus(1.0);
    assert!((s.v[1].norm_sqr() - v2n).abs() < 1e-8);
    assert!((s.i_line[0].norm_sqr() - fn_).abs() < 1e-8);
}

#[test]
fn branch_and_bound_matches_enumeration_on_mini_case() {
    let case = common::case("mini.json");
    let pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
    let status: Vec<_> = pb.index.status.iter().flatten().copied().collect();
    assert_eq!(status.len(), 6);
    assert_eq!(pb.coeffs.len(), 10);

    let (oracle, mask, sos2_fallbacks) = common::enumerate_patterns(&pb.program, &status);

    let r = solve_misocp(&pb.program, &Budget::default());
    assert_eq!(r.status, BnbStatus::Optimal);
    let inc = r.incumbent.unwrap();
    assert!((inc.objective - oracle).abs() <= 1e-5 * oracle.abs().max(1.0), "{} vs {oracle}", inc.objective);
    for (i, v) in status.iter().enumerate() {
        assert_eq!(inc.x[v.0] > 0.5, (mask >> i) & 1 == 1, "load {i}");
    }
    assert!(r.best_bound <= inc.objective + 1e-9);
    eprintln!("enumeration: {sos2_fallbacks} of 64 patterns needed SOS2 search");
}

#[test]
fn fixed_decisions_solve_at_the_root() {
    let case = common::case("degenerate.json");
    let pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
    let r = solve_misocp(&pb.program, &Budget::default());
    let root = solve_socp(&pb.program, &SocpSettings::default());
    assert_eq!(r.nodes, 1);
    assert!((r.incumbent.unwrap().objective - root.objective).abs() < 1e-9);
}

#[test]
fn cone_diagnostic_reports_slack_without_losses_in_objective() {
    let case = common::case("degenerate.json");
    let mut pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
    pb.program.objective = LinExpr::new();
    let sol = solve_socp(&pb.program, &SocpSettings::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    let res = check_cone_tightness(&pb.program, &sol.x);
    assert!(res.is_finite() && res >= 0.0);
}

#[test]
fn halving_the_time_step_barely_moves_the_slip() {
    let case = common::case("mini.json");
    let plan = common::solve(&case).plan;
    let run = |dt: f64| {
        let cfg = SimConfig {
            dt,
            t_end: 0.3,
            ..SimConfig::default()
        };
        simulate_start(&case, &plan, &cfg).unwrap().samples.last().unwrap().slip
    };
    let (a, b) = (run(1e-3), run(5e-4));
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn fixed_voltage_timing_matches_simulation_for_heavy_rotor() {
    let mut case = common::edited("degenerate.json", |v| {
        v["buses"] = json!([{"id": 1, "is_substation": true}, {"id": 2}]);
        v["lines"] = json!([{"from": 1, "to": 2, "r": 0.0, "x": 0.0, "ampacity_sq": 16.0}]);
        v["loads"] = json!([{"bus": 2, "P0": 0.5, "Q0": 0.25, "kind": "motor_restart"}]);
        v["scenario"]["steps"] = json!(20);
    });
    case.motor.h *= 10.0;
    let plan = common::solve(&case).plan;
    let grid = SlipGrid::standard(&case.motor_model(), &case.motor.mech_load, 20).unwrap();
    let coeffs = step_coeffs(&case.motor_model(), &case.motor.mech_load, &grid);
    let t = acceleration_times(&coeffs, &vec![1.0; 20]).unwrap();
    let tr = simulate_start(&case, &plan, &SimConfig::default()).unwrap();
    let t_sim = tr.time_at_slip(grid.steps[19]).unwrap();
    assert!((t_sim - t[19]).abs() <= 0.05 * t[19], "{t_sim} vs {}", t[19]);
}
