//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::time::Instant;

use motorstart::linearize::{emit_product, emit_pwl};
use motorstart::motor::{torque_gain, MotorModel};
use motorstart::network::NetworkCase;
use motorstart::program::ConicProgram;
use motorstart::report::{check_plan, digest, solve_case, PlanFile, RunReport, SolveFlags, SolveOutcome, SolverStats, PLAN_FORMAT};
use motorstart::restoration::{build_for_case, BuildOptions};
use motorstart::sim::{Outcome, SimConfig, Verdict};
use motorstart::solver::bnb::{check_cone_tightness, solve_misocp, BnbStatus, Budget};
use motorstart::solver::socp::{solve_socp, SocpSettings, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line { pass, detail: detail.into() }
}

fn c1() -> Line {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut motors = vec![common::case("feeder_e.json").motor_model()];
    for _ in 0..100 {
        motors.push(MotorModel {
            r_s: rng.gen_range(0.002..0.1),
            x_ls: rng.gen_range(0.01..0.25),
            r_r: rng.gen_range(0.002..0.1),
            x_lr: rng.gen_range(0.01..0.25),
            x_m: rng.gen_range(0.8..6.0),
            h: rng.gen_range(0.05..3.0),
            k_d: rng.gen_range(0.0..0.05),
        });
    }
    let mut worst: f64 = 0.0;
    for m in &motors {
        for i in 1..=50 {
            let s = i as f64 / 50.0;
            let a = torque_gain(m, s).unwrap();
            let b = common::air_gap_torque(m, s);
            worst = worst.max((a - b).abs() / b);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(worst <= 1e-9 && secs < 1.0, format!("101 motors, worst relative error {worst:.1e}, {secs:.2} s"))
}

fn c2() -> Line {
    let t0 = Instant::now();
    let bps = [0.0, 0.7, 1.5, 2.0, 3.6];
    let vals = [0.3, -1.2, 2.5, 2.5, 0.1];
    let mut worst: f64 = 0.0;
    let mut p = ConicProgram::new();
    let x = p.add_var("x", 0.0, 3.6);
    let b = emit_pwl(&mut p, x, &bps, &vals, "f").unwrap();
    let mut point = vec![0.0; p.vars.len()];
    for i in 0..bps.len() - 1 {
        for w in [0.0, 0.25, 0.5, 0.9, 1.0] {
            point.iter_mut().for_each(|v| *v = 0.0);
            point[b.lambdas[i].0] = 1.0 - w;
            point[b.lambdas[i + 1].0] = w;
            point[x.0] = (1.0 - w) * bps[i] + w * bps[i + 1];
            point[b.output().0] = (1.0 - w) * vals[i] + w * vals[i + 1];
            worst = worst.max(p.worst_violation(&point).0);
            if w == 0.0 && point[b.output().0] != vals[i] {
                worst = f64::INFINITY;
            }
        }
    }
    let pwl_ok = worst <= 1e-12;

    // Product block: on a grid containing every vertex, y is feasible
    // exactly when y = x1 x2.
    let u = 2.5;
    let mut q = ConicProgram::new();
    let bin = q.add_binary("b");
    let c = q.add_var("c", 0.0, u);
    let y = emit_product(&mut q, bin, c, u, "prod").unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| u * i as f64 / 20.0).collect();
    let mut product_ok = true;
    for bv in [0.0, 1.0] {
        for &cv in &grid {
            for &yv in &grid {
                let mut pt = vec![0.0; q.vars.len()];
                pt[bin.0] = bv;
                pt[c.0] = cv;
                pt[y.0] = yv;
                let feasible = q.worst_violation(&pt).0 <= 1e-12;
                product_ok &= feasible == ((yv - bv * cv).abs() <= 1e-12);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        pwl_ok && product_ok && secs < 1.0,
        format!("PWL worst violation {worst:.1e}, product set exact: {product_ok}, {secs:.2} s"),
    )
}

fn c3() -> Line {
    let t0 = Instant::now();
    let (p, v2, f) = common::two_bus_program();
    let sol = solve_socp(&p, &SocpSettings::default());
    let (v2n, fn_) = common::newton_two_bus(1.0);
    let dv = (sol.x[v2.0] - v2n).abs();
    let df = (sol.x[f.0] - fn_).abs();
    let cone = check_cone_tightness(&p, &sol.x);
    let secs = t0.elapsed().as_secs_f64();
    line(
        sol.status == SolveStatus::Optimal && dv <= 1e-6 && df <= 1e-6 && cone <= 1e-7 && secs < 5.0,
        format!("|dV| {dv:.1e}, |dF| {df:.1e}, cone residual {cone:.1e}, {secs:.2} s"),
    )
}

fn c4() -> Line {
    let t0 = Instant::now();
    let case = common::case("mini.json");
    let pb = build_for_case(&case, &BuildOptions::from_case(&case)).unwrap();
    let status: Vec<_> = pb.index.status.iter().flatten().copied().collect();
    let (oracle, mask, _) = common::enumerate_patterns(&pb.program, &status);
    let r = solve_misocp(&pb.program, &Budget::default());
    let Some(inc) = r.incumbent else {
        return line(false, "branch and bound found no plan");
    };
    let rel = (inc.objective - oracle).abs() / oracle.abs().max(1.0);
    let same = status.iter().enumerate().all(|(i, v)| (inc.x[v.0] > 0.5) == ((mask >> i) & 1 == 1));
    let secs = t0.elapsed().as_secs_f64();
    line(
        r.status == BnbStatus::Optimal && rel <= 1e-5 && same && secs < 600.0,
        format!("{} loads, relative objective gap {rel:.1e}, same shed set: {same}, {} nodes, {secs:.1} s", status.len(), r.nodes),
    )
}

struct Run {
    case: NetworkCase,
    out: SolveOutcome,
    verdict: Verdict,
    plan_json: String,
    report_json: String,
}

fn run(case: &NetworkCase, flags: &SolveFlags) -> Run {
    let out = solve_case(case, flags, 1).expect("solvable");
    let checked = check_plan(&out.case, &out.plan, &SimConfig::default()).expect("simulates");
    let dig = digest(case, flags);
    let stats = SolverStats::new(&out.problem.program, &out.result);
    let report_json = RunReport::new(&dig, &out.plan, Some(stats), &checked.trajectory, &checked.verdict).to_json();
    let plan_json = PlanFile {
        format: PLAN_FORMAT.into(),
        digest: dig,
        flags: flags.clone(),
        plan: out.plan.clone(),
    }
    .to_json();
    Run {
        case: case.clone(),
        out,
        verdict: checked.verdict,
        plan_json,
        report_json,
    }
}

fn c5(std: &Run) -> Line {
    let r = std.out.plan.cone_residual;
    line(r <= 1e-5, format!("max cone residual {r:.1e} at the standard optimum"))
}

fn c6(std: &Run, heavy: &Run, secs: f64) -> Line {
    let clean = |r: &Run| r.verdict.outcome == Outcome::Started && !r.verdict.margins.any_trip();
    let c = &std.verdict.comparison;
    let h = &heavy.verdict.comparison;
    let pass = clean(std)
        && clean(heavy)
        && !c.partial
        && !h.partial
        && c.max_voltage_dev <= 0.05
        && h.max_voltage_dev <= 0.02
        && c.max_timing_dev <= 0.10
        && h.max_timing_dev <= 0.10
        && secs < 120.0;
    line(
        pass,
        format!(
            "standard: V dev {:.4}, timing dev {:.4}; H x10: V dev {:.4}, timing dev {:.4}; no stall or trip: {}; {secs:.1} s",
            c.max_voltage_dev,
            c.max_timing_dev,
            h.max_voltage_dev,
            h.max_timing_dev,
            clean(std) && clean(heavy)
        ),
    )
}

fn c7(std: &Run) -> Line {
    // A squared-voltage margin m near 0.8 p.u. is about m / 1.6 in magnitude,
    // so bounding the squared margin is the stricter check.
    match &std.out.plan.min_voltage_margin {
        Some(m) => line(
            m.margin <= 1e-3 && m.margin >= -1e-6,
            format!("min voltage margin {:.1e} p.u.^2 at {} step {}", m.margin, m.location, m.step),
        ),
        None => line(false, "no under-voltage relay in the case"),
    }
}

fn c8(linear: &Run, constant: &Run) -> Line {
    let a = linear.out.plan.objectives.f_re_raw;
    let b = constant.out.plan.objectives.f_re_raw;
    line(
        b >= a - 1e-9,
        format!(
            "priority-weighted shed: linear {a:.4} {:?}, constant {b:.4} {:?}",
            linear.out.plan.shed_buses(),
            constant.out.plan.shed_buses()
        ),
    )
}

/// Largest voltage deviation over the slips that both grids share.
fn shared_slip_deviation(coarse: &Run, fine: &Run) -> (f64, f64, usize) {
    let dev = |r: &Run, s: f64| {
        let k = r.out.plan.grid.steps.iter().position(|&x| (x - s).abs() < 1e-9)?;
        r.verdict.comparison.steps[k].v_dev
    };
    let mut worst = (0.0f64, 0.0f64, 0);
    for &s in &coarse.out.plan.grid.steps {
        if let (Some(a), Some(b)) = (dev(coarse, s), dev(fine, s)) {
            worst = (worst.0.max(a), worst.1.max(b), worst.2 + 1);
        }
    }
    worst
}

fn c9(coarse: &Run, fine: &Run) -> Line {
    let (a, b, n) = shared_slip_deviation(coarse, fine);
    let ratio = a / b;
    line(
        n >= 2 && (1.5..=2.5).contains(&ratio),
        format!(
            "K={} vs K={}: shared-slip V dev {a:.5} vs {b:.5} over {n} slips, ratio {ratio:.2}; all-step max {:.5} vs {:.5}",
            coarse.out.plan.steps.len(),
            fine.out.plan.steps.len(),
            coarse.verdict.comparison.max_voltage_dev,
            fine.verdict.comparison.max_voltage_dev
        ),
    )
}

fn c10(a: &Run, b: &Run) -> Line {
    let plan = a.plan_json == b.plan_json;
    let report = a.report_json == b.report_json;
    line(plan && report, format!("plan identical: {plan}, report identical: {report}"))
}

fn report(failed: &mut usize, k: usize, l: Line) {
    println!("criterion {k:>2}: {} {}", if l.pass { "PASS" } else { "FAIL" }, l.detail);
    *failed += usize::from(!l.pass);
}

fn main() {
    let mut failed = 0;
    report(&mut failed, 1, c1());
    report(&mut failed, 2, c2());
    report(&mut failed, 3, c3());
    report(&mut failed, 4, c4());

    let standard = common::case("feeder_e.json");
    let flags = SolveFlags::default();
    let t0 = Instant::now();
    let std_run = run(&standard, &flags);
    let mut heavy_case = standard.clone();
    heavy_case.motor.h *= 10.0;
    let heavy = run(&heavy_case, &flags);
    let secs6 = t0.elapsed().as_secs_f64();
    report(&mut failed, 5, c5(&std_run));
    report(&mut failed, 6, c6(&std_run, &heavy, secs6));
    report(&mut failed, 7, c7(&std_run));

    let constant = run(&common::case("feeder_e_constant.json"), &flags);
    report(&mut failed, 8, c8(&std_run, &constant));

    let fine = run(
        &standard,
        &SolveFlags {
            steps: Some(2 * std_run.case.scenario.steps + 1),
            ..SolveFlags::default()
        },
    );
    report(&mut failed, 9, c9(&std_run, &fine));

    let again = run(&standard, &flags);
    report(&mut failed, 10, c10(&std_run, &again));

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
