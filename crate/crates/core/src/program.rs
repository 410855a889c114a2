//! Solver-facing mixed-integer second-order-cone program.
//!
//! Variables carry bounds and an integrality flag; constraints are linear
//! rows, second-order cones `||head|| <= tail` over affine expressions, and
//! SOS2 sets. The objective is linear. Every row and cone carries a family
//! tag and a human-readable label so diagnostics can name them.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

/// Sparse affine expression `sum coef * x + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn add(mut self, v: VarId, c: f64) -> Self {
        self.push(v, c);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, v: VarId, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn extend_scaled(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.push(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

/// Constraint families, used for counting and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Family {
    /// Branch-flow voltage drop along a line.
    Voltage,
    BalanceP,
    BalanceQ,
    /// Squared-current cone of a line.
    LineCurrent,
    /// Apparent-power cone of a DG.
    DgCapacity,
    Stall,
    /// Definition of the accelerating torque variable.
    AccelTorque,
    /// Running sum of step durations.
    Timing,
    Undervoltage,
    Overcurrent,
    PwlInput,
    PwlOutput,
    PwlConvexity,
    Product,
    /// Anything added by hand in tests.
    Other,
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    /// Left-hand side; the row reads `expr (sense) 0`.
    pub expr: LinExpr,
    pub sense: Sense,
    pub family: Family,
    pub label: String,
}

impl Row {
    /// Signed violation, positive when the row is violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.expr.eval(x);
        match self.sense {
            Sense::Eq => v.abs(),
            Sense::Le => v.max(0.0),
            Sense::Ge => (-v).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cone {
    pub head: Vec<LinExpr>,
    pub tail: LinExpr,
    pub family: Family,
    pub label: String,
    /// Normalization used by tightness diagnostics.
    pub scale: f64,
}

impl Cone {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let h = self.head.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        (h - self.tail.eval(x)).max(0.0)
    }

    /// `(tail^2 - ||head||^2) / 4`; for a rotated line cone this is
    /// `F V - p^2 - q^2`.
    pub fn slack_product(&self, x: &[f64]) -> f64 {
        let t = self.tail.eval(x);
        let h2 = self.head.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
        0.25 * (t * t - h2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sos2Set {
    pub vars: Vec<VarId>,
    /// Strictly increasing reference positions (the breakpoints).
    pub weights: Vec<f64>,
    pub label: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConicProgram {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    pub cones: Vec<Cone>,
    pub sos2: Vec<Sos2Set>,
    pub objective: LinExpr,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lb,
            ub,
            kind: VarKind::Continuous,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lb: 0.0,
            ub: 1.0,
            kind: VarKind::Binary,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_row(&mut self, expr: LinExpr, sense: Sense, family: Family, label: impl Into<String>) {
        self.rows.push(Row {
            expr,
            sense,
            family,
            label: label.into(),
        });
    }

    pub fn add_cone(&mut self, head: Vec<LinExpr>, tail: LinExpr, family: Family, label: impl Into<String>, scale: f64) {
        self.cones.push(Cone {
            head,
            tail,
            family,
            label: label.into(),
            scale,
        });
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries().count()
    }

    pub fn count_rows(&self, family: Family) -> usize {
        self.rows.iter().filter(|r| r.family == family).count()
    }

    pub fn count_cones(&self, family: Family) -> usize {
        self.cones.iter().filter(|c| c.family == family).count()
    }

    /// Structural checks: every reference is declared, every cone has
    /// dimension >= 2, objective finite.
    pub fn check(&self) -> Result<(), String> {
        let n = self.vars.len();
        let ok_expr = |e: &LinExpr| e.constant.is_finite() && e.terms.iter().all(|&(v, c)| v.0 < n && c.is_finite());
        for r in &self.rows {
            if !ok_expr(&r.expr) {
                return Err(format!("row {} references an undeclared variable or is not finite", r.label));
            }
        }
        for c in &self.cones {
            if c.head.is_empty() || !c.head.iter().all(ok_expr) || !ok_expr(&c.tail) {
                return Err(format!("cone {} is malformed", c.label));
            }
        }
        for s in &self.sos2 {
            if s.vars.len() != s.weights.len() || s.vars.iter().any(|v| v.0 >= n) {
                return Err(format!("SOS2 set {} is malformed", s.label));
            }
        }
        if !ok_expr(&self.objective) {
            return Err("objective is not finite".into());
        }
        for v in &self.vars {
            if v.lb > v.ub || v.lb.is_nan() || v.ub.is_nan() {
                return Err(format!("variable {} has empty bounds", v.name));
            }
        }
        Ok(())
    }

    /// Worst row/bound/cone violation at `x` and its label.
    pub fn worst_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        let mut consider = |v: f64, label: &dyn Fn() -> String| {
            if v > worst.0 {
                worst = (v, label());
            }
        };
        for r in &self.rows {
            consider(r.violation(x), &|| r.label.clone());
        }
        for c in &self.cones {
            consider(c.violation(x), &|| c.label.clone());
        }
        for (i, v) in self.vars.iter().enumerate() {
            let viol = (v.lb - x[i]).max(x[i] - v.ub).max(0.0);
            consider(viol, &|| format!("bound of {}", v.name));
        }
        worst
    }

    /// Plain-text standard form with 17 significant digits.
    ///
    /// ```text
    /// MSPROG 1
    /// VARS <n>
    /// <index> <C|B> <lb> <ub> <name>
    /// OBJ <constant> <nnz> (<index> <coef>)*
    /// ROWS <m>
    /// <EQ|LE|GE> <constant> <nnz> (<index> <coef>)* # <label>
    /// CONES <c>
    /// CONE <dim> # <label>
    /// T <constant> <nnz> (<index> <coef>)*
    /// H <constant> <nnz> (<index> <coef>)*   (dim - 1 lines)
    /// SOS2 <s>
    /// SET <len> (<index> <weight>)* # <label>
    /// END
    /// ```
    ///
    /// A row means `constant + sum coef x (sense) 0`; a cone means
    /// `||H|| <= T`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let f = |x: f64| format!("{x:.16e}");
        let expr = |e: &LinExpr| {
            let mut s = format!("{} {}", f(e.constant), e.terms.len());
            for &(v, c) in &e.terms {
                let _ = write!(s, " {} {}", v.0, f(c));
            }
            s
        };
        let _ = writeln!(out, "MSPROG 1");
        let _ = writeln!(out, "VARS {}", self.vars.len());
        for (i, v) in self.vars.iter().enumerate() {
            let k = if v.kind == VarKind::Binary { 'B' } else { 'C' };
            let _ = writeln!(out, "{i} {k} {} {} {}", f(v.lb), f(v.ub), v.name);
        }
        let _ = writeln!(out, "OBJ {}", expr(&self.objective));
        let _ = writeln!(out, "ROWS {}", self.rows.len());
        for r in &self.rows {
            let s = match r.sense {
                Sense::Eq => "EQ",
                Sense::Le => "LE",
                Sense::Ge => "GE",
            };
            let _ = writeln!(out, "{s} {} # {}", expr(&r.expr), r.label);
        }
        let _ = writeln!(out, "CONES {}", self.cones.len());
        for c in &self.cones {
            let _ = writeln!(out, "CONE {} # {}", c.head.len() + 1, c.label);
            let _ = writeln!(out, "T {}", expr(&c.tail));
            for h in &c.head {
                let _ = writeln!(out, "H {}", expr(h));
            }
        }
        let _ = writeln!(out, "SOS2 {}", self.sos2.len());
        for s in &self.sos2 {
            let mut line = format!("SET {}", s.vars.len());
            for (v, w) in s.vars.iter().zip(&s.weights) {
                let _ = write!(line, " {} {}", v.0, f(*w));
            }
            let _ = writeln!(out, "{line} # {}", s.label);
        }
        out.push_str("END\n");
        out
    }
}
