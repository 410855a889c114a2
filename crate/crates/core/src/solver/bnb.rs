//! Branch-and-bound over binaries and SOS2 sets on top of the conic
//! relaxation.
//!
//! Node order is best-bound with depth-first plunging until the first
//! incumbent exists; ties go to the lower node id. With several workers a
//! batch of nodes is solved concurrently and the results are merged in node
//! id order, so the search tree does not depend on thread timing.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::socp::{solve_relaxation, SocpSettings, SocpSolution, SolveStatus};
use crate::linearize::{sos2_branch, sos2_support_width, Sos2Branch};
use crate::program::{ConicProgram, Family, VarKind};

/// Distance from 0/1 below which a binary counts as integral.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub node_limit: usize,
    pub time_limit: Option<f64>,
    pub target_gap: f64,
    pub workers: usize,
    pub socp: SocpSettings,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            node_limit: 100_000,
            time_limit: None,
            target_gap: 1e-7,
            workers: 1,
            socp: SocpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub incumbent: Option<SocpSolution>,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    /// Nodes whose relaxation neither converged nor branched; they were
    /// dropped, so optimality is only as good as the solver's accuracy there.
    pub unresolved_nodes: usize,
    pub wall_time: f64,
    pub log: Vec<String>,
}

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    depth: u32,
    bound: f64,
    fixes: Vec<(usize, f64, f64)>,
}

enum Branching {
    None,
    Binary(usize, f64),
    Sos2(usize, usize),
}

struct Search<'a> {
    program: &'a ConicProgram,
    budget: &'a Budget,
    lb0: Vec<f64>,
    ub0: Vec<f64>,
    binaries: Vec<usize>,
    next_id: u64,
    incumbent: Option<SocpSolution>,
    log: Vec<String>,
}

impl<'a> Search<'a> {
    fn bounds(&self, fixes: &[(usize, f64, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lb = self.lb0.clone();
        let mut ub = self.ub0.clone();
        for &(j, l, u) in fixes {
            lb[j] = lb[j].max(l);
            ub[j] = ub[j].min(u);
        }
        (lb, ub)
    }

    fn solve(&self, fixes: &[(usize, f64, f64)]) -> SocpSolution {
        let (lb, ub) = self.bounds(fixes);
        solve_relaxation(self.program, &lb, &ub, &self.budget.socp)
    }

    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective)
    }

    fn prunable(&self, bound: f64) -> bool {
        let inc = self.incumbent_value();
        inc.is_finite() && bound >= inc - self.budget.target_gap * inc.abs().max(1.0)
    }

    /// Branching decision at a point clamped into the node's bounds, so a
    /// point from an unconverged solve can never re-split a fixed variable.
    fn choose_branch(&self, x: &[f64], fixes: &[(usize, f64, f64)]) -> Branching {
        let (lb, ub) = self.bounds(fixes);
        let x: Vec<f64> = x.iter().zip(lb.iter().zip(&ub)).map(|(v, (l, u))| v.max(*l).min(*u)).collect();
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            if lb[j] == ub[j] {
                continue;
            }
            let frac = (x[j] - x[j].round()).abs();
            if frac > INT_TOL && best.map_or(true, |(_, f)| frac > f + 1e-12) {
                best = Some((j, frac));
            }
        }
        if let Some((j, _)) = best {
            return Branching::Binary(j, x[j]);
        }
        let mut widest: Option<(usize, usize, usize)> = None;
        for (s, set) in self.program.sos2.iter().enumerate() {
            let lambda: Vec<f64> = set.vars.iter().map(|v| x[v.0]).collect();
            if let Sos2Branch::Split(m) = sos2_branch(&lambda) {
                let w = sos2_support_width(&lambda);
                if widest.map_or(true, |(_, _, bw)| w > bw) {
                    widest = Some((s, m, w));
                }
            }
        }
        match widest {
            Some((s, m, _)) => Branching::Sos2(s, m),
            None => Branching::None,
        }
    }

    fn children(&mut self, node: &Node, bound: f64, how: Branching) -> Vec<Node> {
        let make = |extra: Vec<(usize, f64, f64)>, this: &mut Self| {
            let mut fixes = node.fixes.clone();
            fixes.extend(extra);
            let id = this.next_id;
            this.next_id += 1;
            Node {
                id,
                depth: node.depth + 1,
                bound,
                fixes,
            }
        };
        match how {
            Branching::None => Vec::new(),
            Branching::Binary(j, v) => {
                // The side the relaxation leans to gets the lower id and is
                // explored first while plunging.
                let order = if v >= 0.5 { [1.0, 0.0] } else { [0.0, 1.0] };
                order.iter().map(|&b| make(vec![(j, b, b)], self)).collect()
            }
            Branching::Sos2(s, m) => {
                let vars: Vec<usize> = self.program.sos2[s].vars.iter().map(|v| v.0).collect();
                let low: Vec<_> = vars[m + 1..].iter().map(|&j| (j, f64::NEG_INFINITY, 0.0)).collect();
                let high: Vec<_> = vars[..m].iter().map(|&j| (j, f64::NEG_INFINITY, 0.0)).collect();
                vec![make(low, self), make(high, self)]
            }
        }
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        matches!(self.choose_branch(x, &[]), Branching::None)
    }

    fn offer(&mut self, sol: SocpSolution, source: &str) {
        if sol.status != SolveStatus::Optimal || !self.is_integral(&sol.x) {
            return;
        }
        let better = match &self.incumbent {
            None => true,
            Some(inc) => {
                sol.objective < inc.objective - 1e-12
                    || ((sol.objective - inc.objective).abs() <= 1e-12 && self.lex_less(&sol.x, &inc.x))
            }
        };
        if better {
            self.log.push(format!("incumbent {:.12e} from {source}", sol.objective));
            self.incumbent = Some(sol);
        }
    }

    fn lex_less(&self, a: &[f64], b: &[f64]) -> bool {
        for &j in &self.binaries {
            let (ra, rb) = (a[j].round(), b[j].round());
            if ra != rb {
                return ra < rb;
            }
        }
        false
    }

    /// Rounds binaries, then pins each violated SOS2 set to the segment
    /// containing its weighted mean, re-solving after each pass.
    fn rounding_heuristic(&mut self, node: &Node, x: &[f64]) {
        let mut fixes = node.fixes.clone();
        for &j in &self.binaries {
            let r = x[j].round().clamp(0.0, 1.0);
            fixes.push((j, r, r));
        }
        let mut sol = self.solve(&fixes);
        for _ in 0..3 {
            if sol.status != SolveStatus::Optimal {
                return;
            }
            let mut changed = false;
            for set in &self.program.sos2 {
                let lambda: Vec<f64> = set.vars.iter().map(|v| sol.x[v.0]).collect();
                if sos2_support_width(&lambda) <= 1 {
                    continue;
                }
                let total: f64 = lambda.iter().map(|l| l.max(0.0)).sum();
                let mean = lambda.iter().zip(&set.weights).map(|(l, w)| l.max(0.0) * w).sum::<f64>() / total;
                let seg = set.weights.windows(2).position(|w| mean <= w[1]).unwrap_or(set.weights.len() - 2);
                for (i, v) in set.vars.iter().enumerate() {
                    if i != seg && i != seg + 1 {
                        fixes.push((v.0, f64::NEG_INFINITY, 0.0));
                    }
                }
                changed = true;
            }
            if !changed {
                break;
            }
            sol = self.solve(&fixes);
        }
        self.offer(sol, &format!("rounding at node {}", node.id));
    }
}

/// Solves the program to the budget's gap. Binaries are branched before
/// SOS2 sets.
pub fn solve_misocp(program: &ConicProgram, budget: &Budget) -> BnbResult {
    let start = Instant::now();
    let deadline = budget.time_limit.map(|t| start + Duration::from_secs_f64(t));
    let mut lb0: Vec<f64> = program.vars.iter().map(|v| v.lb).collect();
    let mut ub0: Vec<f64> = program.vars.iter().map(|v| v.ub).collect();
    let binaries: Vec<usize> = (0..program.vars.len()).filter(|&j| program.vars[j].kind == VarKind::Binary).collect();
    for &j in &binaries {
        lb0[j] = lb0[j].max(0.0);
        ub0[j] = ub0[j].min(1.0);
    }
    let mut search = Search {
        program,
        budget,
        lb0,
        ub0,
        binaries,
        next_id: 1,
        incumbent: None,
        log: Vec::new(),
    };
    let mut open = vec![Node {
        id: 0,
        depth: 0,
        bound: f64::NEG_INFINITY,
        fixes: Vec::new(),
    }];
    let workers = budget.workers.max(1);
    let mut nodes = 0usize;
    let mut unresolved = 0usize;
    let mut limit: Option<BnbStatus> = None;
    let mut unbounded = false;

    while !open.is_empty() {
        if nodes >= budget.node_limit {
            limit = Some(BnbStatus::NodeLimit);
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            limit = Some(BnbStatus::TimeLimit);
            break;
        }
        if let Some(inc) = &search.incumbent {
            let bound = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
            if relative_gap(inc.objective, bound) <= budget.target_gap {
                break;
            }
        }

        let plunging = search.incumbent.is_none();
        open.sort_by(|a, b| {
            if plunging {
                b.depth.cmp(&a.depth).then(a.id.cmp(&b.id))
            } else {
                a.bound.total_cmp(&b.bound).then(a.id.cmp(&b.id))
            }
        });
        let take = workers.min(open.len()).min(budget.node_limit - nodes);
        let mut batch: Vec<Node> = open.drain(..take).collect();
        batch.sort_by_key(|n| n.id);

        let solved: Vec<SocpSolution> = if batch.len() == 1 {
            vec![search.solve(&batch[0].fixes)]
        } else {
            let s = &search;
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch.iter().map(|n| scope.spawn(move || s.solve(&n.fixes))).collect();
                handles.into_iter().map(|h| h.join().expect("relaxation worker panicked")).collect()
            })
        };

        for (node, sol) in batch.into_iter().zip(solved) {
            nodes += 1;
            let mut line = format!(
                "node={} depth={} status={:?} obj={:.9e} pres={:.1e}",
                node.id, node.depth, sol.status, sol.objective, sol.residuals.primal
            );
            match sol.status {
                SolveStatus::Infeasible => {
                    line.push_str(" pruned=infeasible");
                }
                SolveStatus::Unbounded => {
                    unbounded = true;
                    line.push_str(" unbounded");
                }
                SolveStatus::Optimal | SolveStatus::MaxIter => {
                    let converged = sol.status == SolveStatus::Optimal;
                    let bound = if converged { sol.objective.max(node.bound) } else { node.bound };
                    if search.prunable(bound) {
                        line.push_str(" pruned=bound");
                    } else {
                        match search.choose_branch(&sol.x, &node.fixes) {
                            Branching::None if converged => {
                                line.push_str(" integral");
                                search.offer(sol, &format!("node {}", node.id));
                            }
                            Branching::None => {
                                unresolved += 1;
                                line.push_str(" unresolved");
                            }
                            how => {
                                match &how {
                                    Branching::Binary(j, v) => {
                                        line.push_str(&format!(" branch={}@{v:.4}", program.vars[*j].name))
                                    }
                                    Branching::Sos2(si, m) => {
                                        line.push_str(&format!(" branch={}@{m}", program.sos2[*si].label))
                                    }
                                    Branching::None => {}
                                }
                                if converged
                                    && search.incumbent.is_none()
                                    && !search.binaries.is_empty()
                                    && (node.id == 0 || nodes % 10 == 0)
                                {
                                    search.rounding_heuristic(&node, &sol.x);
                                }
                                let kids = search.children(&node, bound, how);
                                line.push_str(&format!(" children={}", kids.len()));
                                open.extend(kids);
                            }
                        }
                    }
                }
            }
            search.log.push(line);
        }
        if unbounded {
            break;
        }
        if search.incumbent.is_some() {
            open.retain(|n| !search.prunable(n.bound));
        }
    }

    let inc = search.incumbent_value();
    let open_bound = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let best_bound = open_bound.min(inc);
    let status = if unbounded {
        BnbStatus::Unbounded
    } else if let Some(l) = limit {
        l
    } else if search.incumbent.is_some() {
        BnbStatus::Optimal
    } else {
        BnbStatus::Infeasible
    };
    BnbResult {
        status,
        gap: if inc.is_finite() { relative_gap(inc, best_bound) } else { f64::INFINITY },
        incumbent: search.incumbent,
        best_bound,
        nodes,
        unresolved_nodes: unresolved,
        wall_time: start.elapsed().as_secs_f64(),
        log: search.log,
    }
}

/// `(incumbent - bound) / max(1, |incumbent|)`, clamped at zero.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if bound >= incumbent {
        return 0.0;
    }
    (incumbent - bound) / incumbent.abs().max(1.0)
}

/// Largest relative slack of the line-current cones at `x`:
/// `(F V - p^2 - q^2) / scale`, where `scale` is the cone's own magnitude.
pub fn check_cone_tightness(program: &ConicProgram, x: &[f64]) -> f64 {
    program
        .cones
        .iter()
        .filter(|c| c.family == Family::LineCurrent)
        .map(|c| c.slack_product(x) / c.scale)
        .fold(0.0, f64::max)
}
