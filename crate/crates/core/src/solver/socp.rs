//! Continuous relaxation: a [`ConicProgram`] with integrality dropped,
//! handed to the Clarabel interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use serde::Serialize;

use crate::program::{ConicProgram, LinExpr, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
}

impl Default for SocpSettings {
    fn default() -> Self {
        SocpSettings {
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            tol_gap: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Residuals {
    /// Worst absolute row, bound or cone violation at the returned point.
    pub primal: f64,
    /// Relative dual residual reported by the interior-point solver.
    pub dual: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Largest `s_i z_i` (nonnegative rows) or `s'z` (cones).
    pub complementarity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SocpSolution {
    pub x: Vec<f64>,
    /// Multiplier of each program row (sign follows the solver's `z >= 0`
    /// convention for inequalities).
    pub row_duals: Vec<f64>,
    /// Dual vector of each program cone, tail first.
    pub cone_duals: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: u32,
}

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    fn push_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        let r = self.b.len();
        for (c, v) in coeffs {
            if v != 0.0 {
                self.rows.push(r);
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.b.push(rhs);
        r
    }

    fn into_csc(self, n: usize) -> (CscMatrix<f64>, Vec<f64>) {
        let m = self.b.len();
        let mut order: Vec<usize> = (0..self.vals.len()).collect();
        order.sort_by_key(|&i| (self.cols[i], self.rows[i]));
        let mut colptr = vec![0usize; n + 1];
        let mut rowval = Vec::with_capacity(order.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(order.len());
        let mut last: Option<(usize, usize)> = None;
        for i in order {
            let key = (self.cols[i], self.rows[i]);
            if last == Some(key) {
                *nzval.last_mut().unwrap() += self.vals[i];
                continue;
            }
            last = Some(key);
            colptr[key.0 + 1] += 1;
            rowval.push(key.1);
            nzval.push(self.vals[i]);
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        (CscMatrix::new(m, n, colptr, rowval, nzval), self.b)
    }
}

fn coeffs(e: &LinExpr, scale: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
    e.terms.iter().map(move |&(v, c)| (v.0, c * scale))
}

/// Solves the relaxation with the program's own bounds.
pub fn solve_socp(program: &ConicProgram, settings: &SocpSettings) -> SocpSolution {
    let lb: Vec<f64> = program.vars.iter().map(|v| v.lb).collect();
    let ub: Vec<f64> = program.vars.iter().map(|v| v.ub).collect();
    solve_relaxation(program, &lb, &ub, settings)
}

/// Solves the relaxation with overriding variable bounds.
pub fn solve_relaxation(program: &ConicProgram, lb: &[f64], ub: &[f64], settings: &SocpSettings) -> SocpSolution {
    let n = program.vars.len();
    let mut t = Triplets {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        b: Vec::new(),
    };
    // Clarabel form: A x + s = b, s in K, cones laid out in blocks.
    let mut row_pos = vec![0usize; program.rows.len()];
    for (i, r) in program.rows.iter().enumerate() {
        if r.sense == Sense::Eq {
            row_pos[i] = t.push_row(coeffs(&r.expr, 1.0), -r.expr.constant);
        }
    }
    for j in 0..n {
        if lb[j] == ub[j] {
            t.push_row([(j, 1.0)], lb[j]);
        }
    }
    let n_zero = t.b.len();
    let mut nonneg_sign = Vec::new();
    for (i, r) in program.rows.iter().enumerate() {
        match r.sense {
            Sense::Le => row_pos[i] = t.push_row(coeffs(&r.expr, 1.0), -r.expr.constant),
            Sense::Ge => row_pos[i] = t.push_row(coeffs(&r.expr, -1.0), r.expr.constant),
            Sense::Eq => continue,
        }
        nonneg_sign.push(i);
    }
    for j in 0..n {
        if lb[j] == ub[j] {
            continue;
        }
        if ub[j].is_finite() {
            t.push_row([(j, 1.0)], ub[j]);
        }
        if lb[j].is_finite() {
            t.push_row([(j, -1.0)], -lb[j]);
        }
    }
    let n_nonneg = t.b.len() - n_zero;
    let mut cone_pos = Vec::with_capacity(program.cones.len());
    for c in &program.cones {
        cone_pos.push(t.b.len());
        t.push_row(coeffs(&c.tail, -1.0), c.tail.constant);
        for h in &c.head {
            t.push_row(coeffs(h, -1.0), h.constant);
        }
    }

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_zero > 0 {
        cones.push(ZeroConeT(n_zero));
    }
    if n_nonneg > 0 {
        cones.push(NonnegativeConeT(n_nonneg));
    }
    for c in &program.cones {
        cones.push(SecondOrderConeT(c.head.len() + 1));
    }

    let mut q = vec![0.0; n];
    for &(v, c) in &program.objective.terms {
        q[v.0] += c;
    }
    let (a, b) = t.into_csc(n);
    let p = CscMatrix::<f64>::zeros((n, n));
    let inner = 1e-2;
    let cl_settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter)
        .tol_feas(settings.tol_primal * inner)
        .tol_gap_abs(settings.tol_gap * inner)
        .tol_gap_rel(settings.tol_gap * inner)
        .presolve_enable(false)
        .build()
        .expect("valid solver settings");

    let empty = || SocpSolution {
        x: vec![0.0; n],
        row_duals: vec![0.0; program.rows.len()],
        cone_duals: program.cones.iter().map(|c| vec![0.0; c.head.len() + 1]).collect(),
        objective: f64::NAN,
        status: SolveStatus::Infeasible,
        residuals: Residuals::default(),
        iterations: 0,
    };
    // Contradictory bounds never reach the solver.
    if (0..n).any(|j| lb[j] > ub[j]) {
        return empty();
    }
    let Ok(mut solver) = DefaultSolver::new(&p, &q, &a, &b, &cones, cl_settings) else {
        let mut s = empty();
        s.status = SolveStatus::MaxIter;
        return s;
    };
    solver.solve();
    let sol = &solver.solution;
    let info = &solver.info;

    let x = sol.x.clone();
    let row_duals = row_pos.iter().map(|&r| sol.z[r]).collect();
    let cone_duals = program
        .cones
        .iter()
        .zip(&cone_pos)
        .map(|(c, &start)| sol.z[start..start + c.head.len() + 1].to_vec())
        .collect();

    let mut comp: f64 = 0.0;
    for i in n_zero..n_zero + n_nonneg {
        comp = comp.max((sol.s[i] * sol.z[i]).abs());
    }
    for (c, &start) in program.cones.iter().zip(&cone_pos) {
        let d = c.head.len() + 1;
        let sz: f64 = (start..start + d).map(|i| sol.s[i] * sol.z[i]).sum();
        comp = comp.max(sz.abs());
    }
    let primal = primal_residual(program, &x, lb, ub);
    let residuals = Residuals {
        primal,
        dual: info.res_dual,
        gap: info.gap_rel,
        complementarity: comp,
    };
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            if primal <= settings.tol_primal && info.res_dual <= settings.tol_dual && info.gap_rel.min(info.gap_abs) <= settings.tol_gap {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::MaxIter,
    };
    SocpSolution {
        objective: program.objective.eval(&x),
        x,
        row_duals,
        cone_duals,
        status,
        residuals,
        iterations: info.iterations,
    }
}

/// Worst absolute violation of rows, cones and the given bounds.
pub fn primal_residual(program: &ConicProgram, x: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    let rows = program.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
    let cones = program.cones.iter().map(|c| c.violation(x)).fold(0.0, f64::max);
    let bounds = (0..x.len()).map(|j| (lb[j] - x[j]).max(x[j] - ub[j]).max(0.0)).fold(0.0, f64::max);
    rows.max(cones).max(bounds)
}
