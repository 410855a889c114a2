//! Run artifacts: plan files, run reports, per-step tables and SVG panels.
//!
//! A solve run directory holds
//!
//! | file             | content                                              |
//! |------------------|------------------------------------------------------|
//! | `case.json`      | the normalized case the plan was solved for          |
//! | `plan.json`      | [`PlanFile`]: digest, flags and the decoded plan      |
//! | `report.json`    | [`RunReport`], byte-stable for identical inputs       |
//! | `metadata.json`  | [`Metadata`]: timestamps and wall times              |
//! | `steps.csv`      | per-step plan vs. simulation table                   |
//! | `trajectory.csv` | simulator samples                                    |
//! | `events.log`     | simulator events, one per line                       |
//!
//! `report` adds `slip`, `torques`, `currents`, `voltages` as `.svg` and
//! `.csv` plus `manifest.json`. Every JSON file carries a `format` tag.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::{BusId, NetworkCase};
use crate::program::ConicProgram;
use crate::protection::CurveKind;
use crate::restoration::{
    build_for_case, decode, BuildError, BuildOptions, DecodeError, DgSetpoint, Margin, Objectives, RestorationPlan,
    RestorationProblem,
};
use crate::sim::{
    simulate_start, verdict, Event, MarginReport, Outcome, Sample, SimConfig, SimError, Thresholds, Trajectory,
    Verdict,
};
use crate::solver::bnb::{solve_misocp, BnbResult, BnbStatus, Budget};
use crate::solver::socp::{solve_socp, SocpSettings, SolveStatus};

pub const PLAN_FORMAT: &str = "motorstart-plan/1";
pub const REPORT_FORMAT: &str = "motorstart-report/1";
pub const MANIFEST_FORMAT: &str = "motorstart-manifest/1";

pub const CASE_FILE: &str = "case.json";
pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_FILE: &str = "report.json";
pub const META_FILE: &str = "metadata.json";
pub const STEPS_FILE: &str = "steps.csv";
pub const TRAJ_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Options that change the optimization. The worker count is left out: the
/// search is deterministic in it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveFlags {
    pub steps: Option<usize>,
    pub pwl_breakpoints: Option<usize>,
    pub gap: Option<f64>,
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    pub per_step_dg: bool,
}

impl SolveFlags {
    /// The case with the scenario overrides applied.
    pub fn apply(&self, case: &NetworkCase) -> NetworkCase {
        let mut c = case.clone();
        if let Some(k) = self.steps {
            c.scenario.steps = k;
        }
        if let Some(n) = self.pwl_breakpoints {
            c.scenario.pwl_breakpoints = n;
        }
        c.scenario.per_step_dg |= self.per_step_dg;
        c
    }

    pub fn budget(&self, workers: usize) -> Budget {
        let mut b = Budget {
            workers: workers.max(1),
            time_limit: self.time_limit,
            ..Budget::default()
        };
        if let Some(g) = self.gap {
            b.target_gap = g;
        }
        if let Some(n) = self.node_limit {
            b.node_limit = n;
        }
        b
    }
}

/// Hex SHA-256 of the case and the flags.
pub fn digest(case: &NetworkCase, flags: &SolveFlags) -> String {
    let mut h = Sha256::new();
    h.update(case.to_json().as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(flags).expect("flags serialize").as_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub format: String,
    pub digest: String,
    pub flags: SolveFlags,
    pub plan: RestorationPlan,
}

impl PlanFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan file serializes")
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("no feasible plan: {diagnosis}")]
    Infeasible { diagnosis: String },
    #[error("solver returned an unusable point: {0}")]
    Decode(#[from] DecodeError),
}

impl SolveError {
    /// Whether the failure describes the case rather than the tool.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveError::Infeasible { .. } | SolveError::Build(BuildError::Stall { .. }))
    }
}

pub struct SolveOutcome {
    pub case: NetworkCase,
    pub problem: RestorationProblem,
    pub result: BnbResult,
    pub plan: RestorationPlan,
}

/// Builds and solves the restoration problem for `case` under `flags`.
pub fn solve_case(case: &NetworkCase, flags: &SolveFlags, workers: usize) -> Result<SolveOutcome, SolveError> {
    let case = flags.apply(case);
    let problem = build_for_case(&case, &BuildOptions::from_case(&case))?;
    let result = solve_misocp(&problem.program, &flags.budget(workers));
    let Some(inc) = &result.incumbent else {
        return Err(SolveError::Infeasible {
            diagnosis: diagnose(&problem.program, &result),
        });
    };
    let plan = decode(&problem, &case, &inc.x)?;
    Ok(SolveOutcome {
        case,
        problem,
        result,
        plan,
    })
}

fn diagnose(program: &ConicProgram, result: &BnbResult) -> String {
    let root = solve_socp(program, &SocpSettings::default());
    let root_msg = match root.status {
        SolveStatus::Infeasible => "the continuous relaxation is already infeasible: no shedding pattern or DG dispatch satisfies the network, stall and protection limits even with fractional decisions".to_string(),
        SolveStatus::Optimal => "the continuous relaxation is feasible but no integral shedding pattern is".to_string(),
        s => format!("the continuous relaxation ended with status {s:?}"),
    };
    match result.status {
        BnbStatus::NodeLimit | BnbStatus::TimeLimit => {
            format!("search stopped ({:?}) after {} nodes before finding a plan; {root_msg}", result.status, result.nodes)
        }
        _ => root_msg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub status: BnbStatus,
    pub nodes: usize,
    pub unresolved_nodes: usize,
    pub gap: f64,
    pub best_bound: f64,
    pub objective: f64,
    pub variables: usize,
    pub rows: usize,
    pub cones: usize,
    pub binaries: usize,
    pub sos2_sets: usize,
}

impl SolverStats {
    pub fn new(program: &ConicProgram, r: &BnbResult) -> Self {
        SolverStats {
            status: r.status,
            nodes: r.nodes,
            unresolved_nodes: r.unresolved_nodes,
            gap: r.gap,
            best_bound: r.best_bound,
            objective: r.incumbent.as_ref().map_or(f64::NAN, |i| i.objective),
            variables: program.vars.len(),
            rows: program.rows.len(),
            cones: program.cones.len(),
            binaries: program.num_binaries(),
            sos2_sets: program.sos2.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub shed_buses: Vec<BusId>,
    pub dg: Vec<DgSetpoint>,
    pub objectives: Objectives,
    pub min_voltage_margin: Option<Margin>,
    pub min_current_margin: Option<Margin>,
    pub cone_residual: f64,
    /// Time to reach the last grid slip plus that step's duration [s].
    pub start_time: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub pass: bool,
    pub outcome: Outcome,
    pub reasons: Vec<String>,
    pub events: Vec<Event>,
    pub margins: MarginReport,
    pub max_voltage_dev: f64,
    pub max_timing_dev: f64,
    pub max_current_dev: f64,
    pub partial: bool,
    pub max_energy_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub k: usize,
    pub slip: f64,
    pub t_plan: f64,
    pub t_sim: Option<f64>,
    pub dt: f64,
    pub v_motor_plan: f64,
    pub v_motor_sim: Option<f64>,
    pub v_dev: Option<f64>,
    pub t_ele: f64,
    pub t_load: f64,
    pub uv_floor: Option<f64>,
    pub oc_multiplier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format: String,
    pub digest: String,
    pub scenario: String,
    pub plan: PlanSummary,
    pub solver: Option<SolverStats>,
    pub simulation: SimSummary,
    pub steps: Vec<StepRow>,
}

impl RunReport {
    pub fn new(digest: &str, plan: &RestorationPlan, solver: Option<SolverStats>, traj: &Trajectory, v: &Verdict) -> Self {
        let start_time = plan.steps.last().map_or(0.0, |s| s.t + s.dt);
        let steps = plan
            .steps
            .iter()
            .zip(&v.comparison.steps)
            .map(|(s, d)| StepRow {
                k: s.k,
                slip: s.slip,
                t_plan: s.t,
                t_sim: d.t_sim,
                dt: s.dt,
                v_motor_plan: d.v_plan,
                v_motor_sim: d.v_sim,
                v_dev: d.v_dev,
                t_ele: s.t_ele,
                t_load: s.t_load,
                uv_floor: s.uv_floor_pwl,
                oc_multiplier: s.oc_multiplier_pwl,
            })
            .collect();
        RunReport {
            format: REPORT_FORMAT.into(),
            digest: digest.into(),
            scenario: plan.scenario.clone(),
            plan: PlanSummary {
                shed_buses: plan.shed_buses(),
                dg: plan.dg.clone(),
                objectives: plan.objectives,
                min_voltage_margin: plan.min_voltage_margin.clone(),
                min_current_margin: plan.min_current_margin.clone(),
                cone_residual: plan.cone_residual,
                start_time,
                warnings: plan.warnings.clone(),
            },
            solver,
            simulation: SimSummary {
                pass: v.pass,
                outcome: v.outcome,
                reasons: v.reasons.clone(),
                events: traj.events.clone(),
                margins: v.margins.clone(),
                max_voltage_dev: v.comparison.max_voltage_dev,
                max_timing_dev: v.comparison.max_timing_dev,
                max_current_dev: v.comparison.max_current_dev,
                partial: v.comparison.partial,
                max_energy_residual: traj.max_energy_residual,
            },
            steps,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("k,S,t_plan,t_sim,dt,V_motor_plan,V_motor_sim,V_dev,T_ele,T_load,uv_floor,oc_multiplier\n");
        let o = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.9}"));
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{},{:.9},{:.9},{},{},{:.9},{:.9},{},{}",
                r.k,
                r.slip,
                r.t_plan,
                o(r.t_sim),
                r.dt,
                r.v_motor_plan,
                o(r.v_motor_sim),
                o(r.v_dev),
                r.t_ele,
                r.t_load,
                o(r.uv_floor),
                o(r.oc_multiplier)
            );
        }
        out
    }
}

/// Non-reproducible facts about a run, kept apart from the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format: String,
    pub created_unix_s: u64,
    pub tool_version: String,
    pub solve_wall_time_s: Option<f64>,
    pub simulate_wall_time_s: f64,
    pub workers: usize,
}

/// Everything a check produces for one plan.
pub struct CheckOutcome {
    pub trajectory: Trajectory,
    pub verdict: Verdict,
    pub wall_time: f64,
}

pub fn check_plan(case: &NetworkCase, plan: &RestorationPlan, cfg: &SimConfig) -> Result<CheckOutcome, SimError> {
    let t0 = std::time::Instant::now();
    let trajectory = simulate_start(case, plan, cfg)?;
    let verdict = verdict(&trajectory, plan, case, &Thresholds::default());
    Ok(CheckOutcome {
        trajectory,
        verdict,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}

/// Reads back a trajectory written by [`Trajectory::to_csv`]. Events and
/// the outcome are not part of the CSV and come back empty.
pub fn parse_trajectory_csv(text: &str, case: &NetworkCase) -> Result<Trajectory, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty trajectory file")?.split(',').collect();
    let fixed = ["t", "S", "V_motor", "I_motor", "T_ele", "T_load"];
    if header.len() < fixed.len() || header[..fixed.len()] != fixed {
        return Err("trajectory header does not start with t,S,V_motor,I_motor,T_ele,T_load".into());
    }
    let mut buses = Vec::new();
    let mut lines_out = Vec::new();
    for h in &header[fixed.len()..] {
        if let Some(b) = h.strip_prefix("V_") {
            buses.push(b.parse::<BusId>().map_err(|_| format!("bad column {h}"))?);
        } else if let Some(l) = h.strip_prefix("I_") {
            let line = case
                .lines
                .iter()
                .find(|x| x.label() == l)
                .ok_or_else(|| format!("column {h} names no line of the case"))?;
            lines_out.push((l.to_string(), line.ampacity_sq));
        } else {
            return Err(format!("unexpected column {h}"));
        }
    }
    let mut samples = Vec::new();
    for (n, row) in lines.enumerate() {
        if row.is_empty() {
            continue;
        }
        let vals: Vec<f64> = row
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| format!("row {}: {e}", n + 2))?;
        if vals.len() != header.len() {
            return Err(format!("row {} has {} fields, header has {}", n + 2, vals.len(), header.len()));
        }
        let nb = buses.len();
        samples.push(Sample {
            t: vals[0],
            slip: vals[1],
            v_motor: vals[2],
            i_motor: vals[3],
            t_ele: vals[4],
            t_load: vals[5],
            v_protected: vals[6..6 + nb].to_vec(),
            i_protected: vals[6 + nb..].to_vec(),
        });
    }
    Ok(Trajectory {
        protected_buses: buses,
        protected_lines: lines_out,
        samples,
        events: Vec::new(),
        outcome: Outcome::Horizon,
        max_energy_residual: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mark {
    Line,
    Dashed,
    Dots,
}

struct Series {
    label: String,
    color: &'static str,
    mark: Mark,
    points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub struct Panel {
    pub name: &'static str,
    pub svg: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub format: String,
    pub files: Vec<ManifestEntry>,
    pub omitted: Vec<String>,
}

/// Keeps at most `max` evenly spaced samples, always including the last.
fn thin(samples: &[Sample], max: usize) -> Vec<&Sample> {
    let stride = samples.len().div_ceil(max).max(1);
    let mut out: Vec<&Sample> = samples.iter().step_by(stride).collect();
    if let Some(last) = samples.last() {
        if !std::ptr::eq(*out.last().expect("non-empty"), last) {
            out.push(last);
        }
    }
    out
}

fn limit_points(case: &NetworkCase, kind: CurveKind, t_end: f64, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let curve = case.curve(kind);
    let mut ts: Vec<f64> = std::iter::once(0.0)
        .chain(curve.samples.iter().map(|s| s.0).filter(|&t| t > 0.0 && t < t_end))
        .chain(std::iter::once(t_end))
        .collect();
    ts.dedup();
    ts.into_iter().map(|t| (t, f(curve.limit_at(t)))).collect()
}

/// The four time panels; current and voltage panels are omitted (with a
/// note) when nothing is protected.
pub fn render_panels(case: &NetworkCase, plan: &RestorationPlan, traj: &Trajectory) -> (Vec<Panel>, Vec<String>) {
    let samples = if traj.samples.is_empty() { Vec::new() } else { thin(&traj.samples, 1500) };
    let t_end = traj.samples.last().map_or(1.0, |s| s.t).max(1e-3);
    let mb = case.motor_bus();
    let mut panels = Vec::new();
    let mut omitted = Vec::new();

    let sim = |label: &str, color, f: &dyn Fn(&Sample) -> f64| Series {
        label: label.into(),
        color,
        mark: Mark::Line,
        points: samples.iter().map(|s| (s.t, f(s))).collect(),
    };
    let pts = |label: &str, color, f: &dyn Fn(&crate::restoration::StepState) -> f64| Series {
        label: label.into(),
        color,
        mark: Mark::Dots,
        points: plan.steps.iter().map(|s| (s.t, f(s))).collect(),
    };

    let slip = vec![
        sim("simulated slip", PALETTE[0], &|s| s.slip),
        pts("plan S_k", PALETTE[1], &|s| s.slip),
    ];
    panels.push(panel("slip", "Slip", "slip [-]", slip));

    let torques = vec![
        sim("electrical", PALETTE[0], &|s| s.t_ele),
        sim("load", PALETTE[2], &|s| s.t_load),
        pts("plan electrical", PALETTE[0], &|s| s.t_ele),
        pts("plan load", PALETTE[2], &|s| s.t_load),
    ];
    panels.push(panel("torques", "Torques", "torque [p.u.]", torques));

    if traj.protected_lines.is_empty() {
        omitted.push("currents: no over-current protected line".to_string());
    } else {
        let mut series = Vec::new();
        for (j, (label, f_th)) in traj.protected_lines.iter().enumerate() {
            let i_th = f_th.sqrt();
            let color = PALETTE[j % PALETTE.len()];
            series.push(Series {
                label: format!("line {label}"),
                color,
                mark: Mark::Line,
                points: samples.iter().map(|s| (s.t, s.i_protected[j] / i_th)).collect(),
            });
            if let Some(li) = plan.line_labels.iter().position(|l| l == label) {
                series.push(Series {
                    label: format!("plan line {label}"),
                    color,
                    mark: Mark::Dots,
                    points: plan.steps.iter().map(|s| (s.t, s.f[li].max(0.0).sqrt() / i_th)).collect(),
                });
            }
        }
        series.push(Series {
            label: "over-current limit".into(),
            color: "#000000",
            mark: Mark::Dashed,
            points: limit_points(case, CurveKind::Overcurrent, t_end, f64::sqrt),
        });
        panels.push(panel("currents", "Protected line currents", "|I| / I_th [-]", series));
    }

    if traj.protected_buses.is_empty() {
        omitted.push("voltages: no armed under-voltage relay".to_string());
    } else {
        let mut series = Vec::new();
        for (j, b) in traj.protected_buses.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            series.push(Series {
                label: format!("bus {b}"),
                color,
                mark: Mark::Line,
                points: samples.iter().map(|s| (s.t, s.v_protected[j])).collect(),
            });
            if let Some(bi) = plan.bus_ids.iter().position(|x| x == b) {
                series.push(Series {
                    label: format!("plan bus {b}"),
                    color,
                    mark: Mark::Dots,
                    points: plan.steps.iter().map(|s| (s.t, s.v[bi].max(0.0).sqrt())).collect(),
                });
            }
        }
        if !traj.protected_buses.contains(&case.buses[mb].id) {
            series.push(sim("motor bus", "#7f7f7f", &|s| s.v_motor));
        }
        series.push(Series {
            label: "under-voltage limit".into(),
            color: "#000000",
            mark: Mark::Dashed,
            points: limit_points(case, CurveKind::Undervoltage, t_end, f64::sqrt),
        });
        panels.push(panel("voltages", "Protected bus voltages", "|V| [p.u.]", series));
    }
    (panels, omitted)
}

fn panel(name: &'static str, title: &str, y_label: &str, series: Vec<Series>) -> Panel {
    let mut csv = String::from("series,source,t,value\n");
    for s in &series {
        let source = if s.mark == Mark::Dots { "plan" } else if s.mark == Mark::Dashed { "limit" } else { "sim" };
        for &(t, v) in &s.points {
            let _ = writeln!(csv, "{},{source},{t:.6},{v:.9}", s.label);
        }
    }
    Panel {
        name,
        svg: svg(title, "t [s]", y_label, &series),
        csv,
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 500.0;
    const L: f64 = 80.0;
    const R: f64 = 200.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = (0.0f64, all().map(|p| p.0).fold(0.0, f64::max));
    let mut y0 = all().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut y1 = all().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    y0 -= pad;
    y1 += pad;
    x0 = x0.min(0.0);
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, (L + W - R) / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for x in nice_ticks(x0, x1, 8) {
        let px = sx(x);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{T}" x2="{px:.2}" y2="{}" stroke="#dddddd"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            H - B,
            H - B + 16.0,
            fmt_tick(x)
        );
    }
    for y in nice_ticks(y0, y1, 6) {
        let py = sy(y);
        let _ = writeln!(
            out,
            r##"<line x1="{L}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            W - R,
            L - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 20.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (T + H - B) / 2.0,
        esc(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        match s.mark {
            Mark::Line | Mark::Dashed => {
                let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let dash = if s.mark == Mark::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                    s.color,
                    pts.join(" ")
                );
            }
            Mark::Dots => {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{}"/>"#,
                        sx(x),
                        sy(y),
                        s.color
                    );
                }
            }
        }
        let ly = T + 10.0 + 18.0 * i as f64;
        let lx = W - R + 12.0;
        match s.mark {
            Mark::Dots => {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{ly:.2}" r="3" fill="none" stroke="{}"/>"#, lx + 10.0, s.color);
            }
            m => {
                let dash = if m == Mark::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="1.5"{dash}/>"#,
                    lx + 20.0,
                    s.color
                );
            }
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, esc(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 1.0, 5);
        assert_eq!(t.first().copied(), Some(0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(nice_ticks(0.63, 0.97, 6).iter().all(|&x| (0.63..=0.97).contains(&x)));
    }

    #[test]
    fn tick_labels_trim() {
        assert_eq!(fmt_tick(0.5), "0.5");
        assert_eq!(fmt_tick(2.0), "2");
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn svg_escapes_and_has_fixed_viewbox() {
        let s = svg(
            "a<b",
            "t",
            "y",
            &[Series {
                label: "x&y".into(),
                color: "#000000",
                mark: Mark::Line,
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
        );
        assert!(s.contains(r#"viewBox="0 0 800 500""#));
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
    }

    #[test]
    fn digest_changes_with_flags() {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/degenerate.json")).unwrap();
        let case = crate::network::load_case(&text).unwrap();
        let a = digest(&case, &SolveFlags::default());
        let b = digest(&case, &SolveFlags { steps: Some(5), ..Default::default() });
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_eq!(a, digest(&case, &SolveFlags::default()));
    }
}
