//! Time-dependent under-voltage and over-current trip boundaries and their
//! conservative piecewise-linear approximations.
//!
//! Both curves live on squared quantities: the under-voltage limit is a
//! floor on `|V|^2` [p.u.^2]; the over-current limit is a multiple of the
//! squared thermal ampacity `F_th`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Undervoltage,
    Overcurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionCurve {
    pub kind: CurveKind,
    /// `(t [s], limit)` pairs, strictly increasing in `t`.
    pub samples: Vec<(f64, f64)>,
}

impl ProtectionCurve {
    /// Shipped defaults: floor 0.80 p.u. until 2 s rising to 0.95 p.u. at
    /// 10 s; ceiling 6 F_th until 1 s decaying to 1 F_th at 10 s.
    pub fn default_for(kind: CurveKind) -> Self {
        let samples = match kind {
            CurveKind::Undervoltage => vec![(0.0, 0.64), (2.0, 0.64), (10.0, 0.9025)],
            CurveKind::Overcurrent => vec![(0.0, 6.0), (1.0, 6.0), (10.0, 1.0)],
        };
        ProtectionCurve { kind, samples }
    }

    pub fn validate(&self) -> Result<(), String> {
        let name = match self.kind {
            CurveKind::Undervoltage => "undervoltage",
            CurveKind::Overcurrent => "overcurrent",
        };
        if self.samples.is_empty() {
            return Err(format!("{name} curve has no samples"));
        }
        if self.samples.iter().any(|&(t, v)| !t.is_finite() || !v.is_finite() || t < 0.0 || v < 0.0) {
            return Err(format!("{name} curve: samples must be finite and non-negative"));
        }
        for w in self.samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(format!("{name} curve: sample times must strictly increase"));
            }
            let monotone = match self.kind {
                CurveKind::Undervoltage => w[1].1 >= w[0].1,
                CurveKind::Overcurrent => w[1].1 <= w[0].1,
            };
            if !monotone {
                return Err(format!("{name} curve: limits have the wrong monotonicity"));
            }
        }
        Ok(())
    }

    /// Linear interpolation between samples, clamped outside.
    pub fn limit_at(&self, t: f64) -> f64 {
        interp(&self.samples, t)
    }

    /// Whether the limit is a floor (under-voltage) or a ceiling.
    pub fn is_floor(&self) -> bool {
        self.kind == CurveKind::Undervoltage
    }
}

fn interp(pts: &[(f64, f64)], t: f64) -> f64 {
    let first = pts[0];
    let last = pts[pts.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = pts.partition_point(|p| p.0 <= t);
    let (a, b) = (pts[i - 1], pts[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlCurve {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub source: CurveKind,
}

impl PwlCurve {
    pub fn eval(&self, t: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self.breakpoints.iter().copied().zip(self.values.iter().copied()).collect();
        interp(&pts, t)
    }
}

/// Approximation with `n` breakpoints over the curve's own sample range.
pub fn approximate_curve(curve: &ProtectionCurve, n: usize) -> PwlCurve {
    let t0 = curve.samples[0].0;
    let t1 = curve.samples[curve.samples.len() - 1].0;
    let bps = breakpoint_grid(&[curve], n, t0, t1.max(t0 + 1.0));
    approximate_on(curve, &bps)
}

/// Chooses `n >= 2` breakpoints over `[t0, t1]`: the domain ends, then the
/// curves' sample times (earliest first), then midpoints of the widest gaps.
/// Past the last sample the curves are flat, so the tail gap is filled only
/// when nothing else is left.
pub fn breakpoint_grid(curves: &[&ProtectionCurve], n: usize, t0: f64, t1: f64) -> Vec<f64> {
    assert!(n >= 2 && t1 > t0);
    let mut pts = vec![t0, t1];
    let mut candidates: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.samples.iter().map(|s| s.0))
        .filter(|&t| t > t0 && t < t1)
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for t in candidates {
        if pts.len() >= n {
            break;
        }
        pts.push(t);
    }
    pts.sort_by(f64::total_cmp);
    let last_sample = curves
        .iter()
        .flat_map(|c| c.samples.iter().map(|s| s.0))
        .fold(f64::NEG_INFINITY, f64::max);
    while pts.len() < n {
        let flat_tail = |i: usize| pts[i] >= last_sample && pts.len() > 2;
        let (i, _) = pts
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, if flat_tail(i) { 0.0 } else { w[1] - w[0] }))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mid = 0.5 * (pts[i] + pts[i + 1]);
        pts.insert(i + 1, mid);
    }
    pts
}

/// Conservative approximation at the given breakpoints: values are sampled
/// from the curve and then shifted so the PWL stays on the safe side (above
/// an under-voltage floor, below an over-current ceiling) everywhere.
pub fn approximate_on(curve: &ProtectionCurve, breakpoints: &[f64]) -> PwlCurve {
    let floor = curve.is_floor();
    let mut values: Vec<f64> = breakpoints.iter().map(|&t| curve.limit_at(t)).collect();
    // The true curve is piecewise linear with kinks at its samples, so the
    // worst chord deficit on a segment occurs at an interior sample.
    for i in 0..breakpoints.len().saturating_sub(1) {
        let (a, b) = (breakpoints[i], breakpoints[i + 1]);
        let mut worst: f64 = 0.0;
        for &(t, lim) in curve.samples.iter().filter(|s| s.0 > a && s.0 < b) {
            let chord = values[i] + (values[i + 1] - values[i]) * (t - a) / (b - a);
            let deficit = if floor { lim - chord } else { chord - lim };
            worst = worst.max(deficit);
        }
        if worst > 0.0 {
            let shift = if floor { worst } else { -worst };
            values[i] += shift;
            values[i + 1] += shift;
        }
    }
    // Restore monotonicity by moving further toward the safe side.
    for i in 1..values.len() {
        values[i] = if floor { values[i].max(values[i - 1]) } else { values[i].min(values[i - 1]) };
    }
    if !floor {
        for v in &mut values {
            *v = v.max(0.0);
        }
    }
    PwlCurve {
        breakpoints: breakpoints.to_vec(),
        values,
        source: curve.kind,
    }
}
