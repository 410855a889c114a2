//! Mixed-integer linearization blocks: SOS2 piecewise-linear functions and
//! binary-times-bounded-continuous products.

use thiserror::Error;

use crate::program::{ConicProgram, Family, LinExpr, Sense, Sos2Set, VarId};

#[derive(Debug, Error, PartialEq)]
pub enum LinearizeError {
    #[error("{0}: need at least two breakpoints")]
    TooFewBreakpoints(String),
    #[error("{0}: breakpoints must be strictly increasing")]
    NonMonotone(String),
    #[error("{0}: breakpoint and value counts differ")]
    LengthMismatch(String),
    #[error("{0}: values are not convex in the breakpoints")]
    NotConvex(String),
    #[error("{0}: product bound must be positive, got {1}")]
    NonPositiveBound(String, f64),
}

/// Handles of an emitted piecewise-linear block.
#[derive(Debug, Clone)]
pub struct PwlBlock {
    pub breakpoints: Vec<f64>,
    pub lambdas: Vec<VarId>,
    pub input: VarId,
    /// One output per value table.
    pub outputs: Vec<VarId>,
    /// `None` for convex blocks, which need no ordering condition.
    pub sos2_index: Option<usize>,
}

impl PwlBlock {
    pub fn output(&self) -> VarId {
        self.outputs[0]
    }
}

/// Emits `x = sum l_i x_i`, `f = sum l_i f(x_i)`, `sum l_i = 1`, `l >= 0`
/// and registers the lambdas as one SOS2 set.
pub fn emit_pwl(
    program: &mut ConicProgram,
    input: VarId,
    breakpoints: &[f64],
    values: &[f64],
    label: &str,
) -> Result<PwlBlock, LinearizeError> {
    emit_pwl_multi(program, input, breakpoints, &[values.to_vec()], label)
}

/// Like [`emit_pwl`] but several functions of the same input share one
/// lambda set.
pub fn emit_pwl_multi(
    program: &mut ConicProgram,
    input: VarId,
    breakpoints: &[f64],
    tables: &[Vec<f64>],
    label: &str,
) -> Result<PwlBlock, LinearizeError> {
    emit_lambda_block(program, input, breakpoints, tables, label, true)
}

/// Lambda form of a convex function without the SOS2 set. Any feasible
/// lambda gives an output on or above the interpolant, so the block is an
/// exact epigraph wherever the output is only bounded from below.
pub fn emit_convex_pwl(
    program: &mut ConicProgram,
    input: VarId,
    breakpoints: &[f64],
    values: &[f64],
    label: &str,
) -> Result<PwlBlock, LinearizeError> {
    if values.len() == breakpoints.len() && breakpoints.len() >= 3 {
        let slope = |i: usize| (values[i + 1] - values[i]) / (breakpoints[i + 1] - breakpoints[i]);
        let tol = 1e-12 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if (1..breakpoints.len() - 1).any(|i| slope(i) < slope(i - 1) - tol) {
            return Err(LinearizeError::NotConvex(label.into()));
        }
    }
    emit_lambda_block(program, input, breakpoints, &[values.to_vec()], label, false)
}

fn emit_lambda_block(
    program: &mut ConicProgram,
    input: VarId,
    breakpoints: &[f64],
    tables: &[Vec<f64>],
    label: &str,
    sos2: bool,
) -> Result<PwlBlock, LinearizeError> {
    if breakpoints.len() < 2 {
        return Err(LinearizeError::TooFewBreakpoints(label.into()));
    }
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LinearizeError::NonMonotone(label.into()));
    }
    if tables.iter().any(|t| t.len() != breakpoints.len()) {
        return Err(LinearizeError::LengthMismatch(label.into()));
    }
    let lambdas: Vec<VarId> = (0..breakpoints.len())
        .map(|i| program.add_var(format!("{label}.lambda[{i}]"), 0.0, 1.0))
        .collect();

    let mut in_row = LinExpr::var(input);
    for (&l, &x) in lambdas.iter().zip(breakpoints) {
        in_row.push(l, -x);
    }
    program.add_row(in_row, Sense::Eq, Family::PwlInput, format!("{label}.input"));

    let mut outputs = Vec::with_capacity(tables.len());
    for (j, values) in tables.iter().enumerate() {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = program.add_var(format!("{label}.out[{j}]"), lo, hi);
        let mut row = LinExpr::var(y);
        for (&l, &f) in lambdas.iter().zip(values) {
            row.push(l, -f);
        }
        program.add_row(row, Sense::Eq, Family::PwlOutput, format!("{label}.output[{j}]"));
        outputs.push(y);
    }

    let mut sum = LinExpr::constant(-1.0);
    for &l in &lambdas {
        sum.push(l, 1.0);
    }
    program.add_row(sum, Sense::Eq, Family::PwlConvexity, format!("{label}.convexity"));

    let sos2_index = sos2.then(|| {
        program.sos2.push(Sos2Set {
            vars: lambdas.clone(),
            weights: breakpoints.to_vec(),
            label: label.into(),
        });
        program.sos2.len() - 1
    });
    Ok(PwlBlock {
        breakpoints: breakpoints.to_vec(),
        lambdas,
        input,
        outputs,
        sos2_index,
    })
}

/// `y = x1 * x2` for binary `x1` and `0 <= x2 <= u`:
/// `0 <= y <= u x1` and `x2 - u (1 - x1) <= y <= x2`.
pub fn emit_product(
    program: &mut ConicProgram,
    binary: VarId,
    cont: VarId,
    u: f64,
    label: &str,
) -> Result<VarId, LinearizeError> {
    if !(u > 0.0) {
        return Err(LinearizeError::NonPositiveBound(label.into(), u));
    }
    let y = program.add_var(format!("{label}.y"), 0.0, u);
    program.add_row(
        LinExpr::var(y).add(binary, -u),
        Sense::Le,
        Family::Product,
        format!("{label}.upper_binary"),
    );
    program.add_row(
        LinExpr::var(y).add(cont, -1.0),
        Sense::Le,
        Family::Product,
        format!("{label}.upper_cont"),
    );
    program.add_row(
        LinExpr::var(y).add(cont, -1.0).add(binary, -u).plus(u),
        Sense::Ge,
        Family::Product,
        format!("{label}.lower"),
    );
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sos2Branch {
    /// Support already within two adjacent members.
    Feasible,
    /// 0-based split index `m`: one child zeroes members above `m`, the
    /// other zeroes members below `m`.
    Split(usize),
}

/// Support threshold for SOS2 checks.
pub const SOS2_TOL: f64 = 1e-5;

/// Standard SOS2 dichotomy at the weighted-median member, clamped strictly
/// inside the current support so both children exclude the current point.
pub fn sos2_branch(lambda: &[f64]) -> Sos2Branch {
    let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > SOS2_TOL).collect();
    let (Some(&first), Some(&last)) = (support.first(), support.last()) else {
        return Sos2Branch::Feasible;
    };
    if last - first <= 1 {
        return Sos2Branch::Feasible;
    }
    let total: f64 = lambda.iter().map(|l| l.max(0.0)).sum();
    let mut acc = 0.0;
    let mut median = first;
    for (i, l) in lambda.iter().enumerate() {
        acc += l.max(0.0);
        if acc >= 0.5 * total {
            median = i;
            break;
        }
    }
    Sos2Branch::Split(median.clamp(first + 1, last - 1))
}

/// Width of the support (`last - first`), zero when empty.
pub fn sos2_support_width(lambda: &[f64]) -> usize {
    let mut it = (0..lambda.len()).filter(|&i| lambda[i] > SOS2_TOL);
    match it.next() {
        Some(first) => it.last().unwrap_or(first) - first,
        None => 0,
    }
}
