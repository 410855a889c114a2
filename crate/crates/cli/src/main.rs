//! `motorstart` command line.
//!
//! Exit codes: 0 ok, 2 input error, 3 infeasible plan or FAIL verdict,
//! 4 plan/case digest mismatch, 5 internal error. Failures print a JSON
//! object with `error` and `message` to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use motorstart::network::{load_case_file, CaseError, NetworkCase};
use motorstart::report::{
    self, check_plan, digest, parse_trajectory_csv, render_panels, solve_case, Manifest, ManifestEntry, Metadata,
    PlanFile, RunReport, SolveFlags, SolverStats, CASE_FILE, EVENTS_FILE, MANIFEST_FILE, MANIFEST_FORMAT, META_FILE,
    PLAN_FILE, PLAN_FORMAT, REPORT_FILE, STEPS_FILE, TRAJ_FILE,
};
use motorstart::restoration::{build_for_case, BuildOptions};
use motorstart::sim::SimConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "motorstart", version, about = "Plan load shedding and DG dispatch for a safe induction motor restart")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a case file.
    Validate { case: PathBuf },
    /// Optimize shedding and DG setpoints, then simulate the start.
    Solve(SolveArgs),
    /// Simulate a plan against its case and print the verdict.
    Check {
        case: PathBuf,
        plan: PathBuf,
        /// Also write trajectory, events and report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG panels and CSV tables for a solve run directory.
    Report { run_dir: PathBuf },
}

#[derive(Args)]
struct SolveArgs {
    case: PathBuf,
    /// Number of slip steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Breakpoints of the protection-curve approximation.
    #[arg(long)]
    pwl_breakpoints: Option<usize>,
    /// Relative optimality gap at which the search stops.
    #[arg(long)]
    gap: Option<f64>,
    /// Wall-clock limit for the search [s].
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    /// One DG setpoint per slip step instead of one for the whole start.
    #[arg(long)]
    per_step_dg: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Run directory.
    #[arg(long, env = "MOTORSTART_RUN_DIR", default_value = "run")]
    out: PathBuf,
    /// Write a readable listing of the optimization program.
    #[arg(long)]
    dump_program: Option<PathBuf>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "input",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: 5,
            kind: "internal",
            message: message.into(),
        }
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        Failure::input(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Validate { case } => validate(&case),
        Command::Solve(args) => solve(&args),
        Command::Check { case, plan, out } => check(&case, &plan, out.as_deref()),
        Command::Report { run_dir } => report_cmd(&run_dir),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            println!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), Failure> {
    std::fs::write(dir.join(name), content).map_err(|e| Failure::internal(format!("cannot write {name}: {e}")))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn validate(path: &Path) -> CmdResult {
    let case = load_case_file(path)?;
    let decision = case.loads.iter().filter(|l| case.is_decision_load(l)).count();
    println!(
        "{}",
        json!({
            "ok": true,
            "scenario": case.scenario.id,
            "buses": case.buses.len(),
            "lines": case.lines.len(),
            "loads": case.loads.len(),
            "decision_loads": decision,
            "dgs": case.dgs.len(),
            "digest": digest(&case, &SolveFlags::default()),
        })
    );
    Ok(0)
}

fn solve(a: &SolveArgs) -> CmdResult {
    let case = load_case_file(&a.case)?;
    let flags = SolveFlags {
        steps: a.steps,
        pwl_breakpoints: a.pwl_breakpoints,
        gap: a.gap,
        time_limit: a.time_limit,
        node_limit: a.node_limit,
        per_step_dg: a.per_step_dg,
    };
    if let Some(p) = &a.dump_program {
        let c = flags.apply(&case);
        let problem = build_for_case(&c, &BuildOptions::from_case(&c)).map_err(|e| Failure::input(e.to_string()))?;
        std::fs::write(p, problem.program.dump()).map_err(|e| Failure::internal(format!("cannot write program: {e}")))?;
    }
    let t0 = Instant::now();
    let out = match solve_case(&case, &flags, a.workers) {
        Ok(o) => o,
        Err(e) if e.is_infeasible() => {
            println!("{}", json!({ "error": "infeasible", "message": e.to_string() }));
            return Ok(3);
        }
        Err(report::SolveError::Build(e)) => return Err(Failure::input(e.to_string())),
        Err(e) => return Err(Failure::internal(e.to_string())),
    };
    let solve_time = t0.elapsed().as_secs_f64();
    let dig = digest(&case, &flags);
    let checked = check_plan(&out.case, &out.plan, &SimConfig::default()).map_err(|e| Failure::internal(e.to_string()))?;
    let stats = SolverStats::new(&out.problem.program, &out.result);
    let run = RunReport::new(&dig, &out.plan, Some(stats), &checked.trajectory, &checked.verdict);

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::internal(format!("cannot create {}: {e}", a.out.display())))?;
    let plan_file = PlanFile {
        format: PLAN_FORMAT.into(),
        digest: dig.clone(),
        flags,
        plan: out.plan,
    };
    write(&a.out, CASE_FILE, &case.to_json())?;
    write(&a.out, PLAN_FILE, &plan_file.to_json())?;
    write(&a.out, REPORT_FILE, &run.to_json())?;
    write(&a.out, STEPS_FILE, &run.steps_csv())?;
    write(&a.out, TRAJ_FILE, &checked.trajectory.to_csv())?;
    write(&a.out, EVENTS_FILE, &checked.trajectory.event_log())?;
    let meta = Metadata {
        format: "motorstart-metadata/1".into(),
        created_unix_s: now(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        solve_wall_time_s: Some(solve_time),
        simulate_wall_time_s: checked.wall_time,
        workers: a.workers,
    };
    write(&a.out, META_FILE, &serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;

    println!(
        "{}",
        json!({
            "ok": true,
            "run_dir": a.out,
            "status": out.result.status,
            "nodes": out.result.nodes,
            "gap": out.result.gap,
            "shed_buses": plan_file.plan.shed_buses(),
            "f_re": plan_file.plan.objectives.f_re_raw,
            "verdict": if checked.verdict.pass { "PASS" } else { "FAIL" },
            "wall_time_s": solve_time,
        })
    );
    Ok(0)
}

fn load_plan(path: &Path) -> Result<PlanFile, Failure> {
    let text = read(path)?;
    let plan: PlanFile = serde_json::from_str(&text).map_err(|e| Failure::input(format!("bad plan file: {e}")))?;
    if plan.format != PLAN_FORMAT {
        return Err(Failure::input(format!("plan format {:?}, expected {PLAN_FORMAT:?}", plan.format)));
    }
    Ok(plan)
}

fn check(case_path: &Path, plan_path: &Path, out: Option<&Path>) -> CmdResult {
    let case = load_case_file(case_path)?;
    let pf = load_plan(plan_path)?;
    let dig = digest(&case, &pf.flags);
    if dig != pf.digest {
        return Err(Failure {
            code: 4,
            kind: "digest_mismatch",
            message: format!("plan was made for case digest {}, this case is {dig}", pf.digest),
        });
    }
    let case = pf.flags.apply(&case);
    if pf.plan.loads.len() != case.loads.len() || pf.plan.dg.len() != case.dgs.len() {
        return Err(Failure::input("plan does not match the case's loads and DGs"));
    }
    let checked = check_plan(&case, &pf.plan, &SimConfig::default()).map_err(|e| Failure::internal(e.to_string()))?;
    let v = &checked.verdict;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))?;
        let run = RunReport::new(&dig, &pf.plan, None, &checked.trajectory, v);
        write(dir, REPORT_FILE, &run.to_json())?;
        write(dir, STEPS_FILE, &run.steps_csv())?;
        write(dir, TRAJ_FILE, &checked.trajectory.to_csv())?;
        write(dir, EVENTS_FILE, &checked.trajectory.event_log())?;
    }
    let negative: Vec<_> = v
        .margins
        .entries
        .iter()
        .filter(|e| e.tripped)
        .map(|e| json!({ "location": e.location, "margin": e.min_margin, "t": e.at_time }))
        .collect();
    println!(
        "{}",
        json!({
            "verdict": if v.pass { "PASS" } else { "FAIL" },
            "outcome": v.outcome,
            "reasons": v.reasons,
            "negative_margins": negative,
            "max_voltage_dev": v.comparison.max_voltage_dev,
            "max_timing_dev": v.comparison.max_timing_dev,
            "max_current_dev": v.comparison.max_current_dev,
            "events": checked.trajectory.events,
        })
    );
    Ok(if v.pass { 0 } else { 3 })
}

fn report_cmd(dir: &Path) -> CmdResult {
    for f in [CASE_FILE, PLAN_FILE, TRAJ_FILE] {
        if !dir.join(f).is_file() {
            return Err(Failure::input(format!("run directory {} lacks {f}", dir.display())));
        }
    }
    let case: NetworkCase = load_case_file(&dir.join(CASE_FILE))?;
    let pf = load_plan(&dir.join(PLAN_FILE))?;
    let case = pf.flags.apply(&case);
    let traj = parse_trajectory_csv(&read(&dir.join(TRAJ_FILE))?, &case).map_err(Failure::input)?;
    let (panels, omitted) = render_panels(&case, &pf.plan, &traj);
    let mut files = Vec::new();
    for p in &panels {
        for (ext, body) in [("svg", &p.svg), ("csv", &p.csv)] {
            let name = format!("{}.{ext}", p.name);
            write(dir, &name, body)?;
            files.push(ManifestEntry {
                sha256: report::sha256_hex(body.as_bytes()),
                file: name,
            });
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        files,
        omitted,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(dir, MANIFEST_FILE, &text)?;
    println!("{text}");
    Ok(0)
}
