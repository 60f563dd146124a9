//! Maximization of positively homogeneous concave functions over the floored
//! simplex `{d : d_i >= d_min, sum d_i = q}`.
//!
//! Lower bounds come from projected supergradient ascent interleaved with
//! Kelley points from the cutting-plane model. Upper bounds come from convex
//! combinations of linear majorants: if `f(x) <= c_k . x` for every cut `c_k`,
//! then for any weights `w` in the unit simplex, `f(x) <= (sum w_k c_k) . x`,
//! and the maximum of that linear function over the floored simplex is a
//! certified bound on the optimum. The weights are fitted by LP, but the bound
//! is recomputed from the (clamped, renormalized) weights so LP round-off does
//! not leak into the certificate.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concave function that is positively homogeneous of degree one.
pub(crate) trait HomogeneousConcave {
    fn dim(&self) -> usize;

    /// Returns `f(d)` and appends linear majorants `c` with `f(x) <= c . x` for
    /// every positive `x`. The first appended cut must be tight at `d`.
    fn evaluate(&self, d: &[f64], cuts: &mut Vec<Vec<f64>>) -> Result<f64>;
}

/// Budget and stopping rules for the diagonal-scaling searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Stop once `upper - lower <= gap_tol * max(1, |lower|)`.
    pub gap_tol: f64,
    /// Floor on every diagonal entry.
    pub d_min: f64,
    /// Stop as soon as the lower bound certifies feasibility.
    pub stop_when_feasible: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            budget: 5000,
            gap_tol: 1e-6,
            d_min: 1e-9,
            stop_when_feasible: false,
        }
    }
}

const REFINE_EVERY: usize = 20;
const MAX_CUTS: usize = 512;

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub best_d: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct CutPool {
    cuts: Vec<Vec<f64>>,
    support: Vec<Vec<f64>>,
}

impl CutPool {
    fn push_all(&mut self, fresh: &mut Vec<Vec<f64>>) {
        self.cuts.append(fresh);
        if self.cuts.len() > MAX_CUTS {
            let keep = MAX_CUTS
                .saturating_sub(self.support.len())
                .max(MAX_CUTS / 2);
            let start = self.cuts.len() - keep;
            let mut rebuilt = self.support.clone();
            rebuilt.extend(self.cuts.drain(start..));
            self.cuts = rebuilt;
        }
    }
}

/// Euclidean projection onto `{x : x_i >= lo, sum x = total}`.
pub(crate) fn project_floored_simplex(x: &[f64], lo: f64, total: f64) -> Vec<f64> {
    let n = x.len();
    let mass = total - lo * n as f64;
    let y: Vec<f64> = x.iter().map(|v| v - lo).collect();
    let mut sorted = y.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - mass) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0) + lo).collect()
}

/// `max c . x` over the floored simplex.
fn linear_max(c: &[f64], lo: f64, total: f64) -> f64 {
    let n = c.len() as f64;
    let sum: f64 = c.iter().sum();
    let top = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lo * sum + (total - lo * n) * top
}

/// Certified upper bound from the cut pool plus the support of the fitted weights.
fn certified_bound(cuts: &[Vec<f64>], lo: f64, total: f64) -> Option<(f64, Vec<Vec<f64>>)> {
    let n = cuts.first()?.len();
    let spread = total - lo * n as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let s = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let w: Vec<_> = cuts
        .iter()
        .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let ones: Vec<_> = w.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for i in 0..n {
        let mut row: Vec<_> = cuts
            .iter()
            .zip(&w)
            .map(|(c, &v)| (v, lo * c.iter().sum::<f64>() + spread * c[i]))
            .collect();
        row.push((s, -1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, 0.0);
    }
    let solution = lp.solve().ok()?.into_solution().ok()?;
    let weights: Vec<f64> = w.iter().map(|&v| solution.var_value(v).max(0.0)).collect();
    let total_weight: f64 = weights.iter().sum();
    if !(total_weight.is_finite() && total_weight > 0.0) {
        return None;
    }
    let mut combined = vec![0.0; n];
    let mut support = Vec::new();
    for (c, &wk) in cuts.iter().zip(&weights) {
        if wk > 0.0 {
            support.push(c.clone());
            for (acc, ci) in combined.iter_mut().zip(c) {
                *acc += wk / total_weight * ci;
            }
        }
    }
    Some((linear_max(&combined, lo, total), support))
}

/// Maximizer of the cutting-plane model `min_k c_k . x` over the floored simplex.
fn kelley_point(cuts: &[Vec<f64>], lo: f64, total: f64) -> Option<Vec<f64>> {
    let n = cuts.first()?.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let d: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (lo, total))).collect();
    let ones: Vec<_> = d.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, total);
    for c in cuts {
        let mut row: Vec<_> = d.iter().zip(c).map(|(&v, &ci)| (v, -ci)).collect();
        row.push((t, 1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, 0.0);
    }
    let solution = lp.solve().ok()?.into_solution().ok()?;
    let raw: Vec<f64> = d.iter().map(|&v| solution.var_value(v)).collect();
    Some(project_floored_simplex(&raw, lo, total))
}

fn gap_closed(lower: f64, upper: f64, gap_tol: f64) -> bool {
    upper - lower <= gap_tol * lower.abs().max(1.0)
}

/// Maximizes `f` over the floored simplex with `sum d = dim`.
///
/// `threshold` is the feasibility level: the run stops early once the upper
/// bound drops to it, or (with `stop_when_feasible`) once the lower bound
/// exceeds it.
pub(crate) fn maximize<F: HomogeneousConcave>(
    f: &F,
    opts: &SolverOptions,
    threshold: f64,
) -> Result<Outcome> {
    let n = f.dim();
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot optimize over an empty diagonal".into(),
        ));
    }
    let total = n as f64;
    let lo = opts.d_min;
    if !(lo > 0.0 && lo * total < total) {
        return Err(Error::InvalidInput(format!(
            "d_min {lo} must lie in (0, 1)"
        )));
    }

    let mut d = vec![1.0; n];
    let mut best_d = d.clone();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut pool = CutPool {
        cuts: Vec::new(),
        support: Vec::new(),
    };
    let mut fresh = Vec::new();
    let radius = 0.5 * total;
    let mut iterations = 0;
    let mut converged = false;
    let mut step_index = 0usize;

    while iterations < opts.budget {
        fresh.clear();
        let value = f.evaluate(&d, &mut fresh)?;
        iterations += 1;
        let g = fresh
            .first()
            .cloned()
            .ok_or_else(|| Error::Numerical("objective returned no supergradient".into()))?;
        if value > lower {
            lower = value;
            best_d.clone_from(&d);
        }
        pool.push_all(&mut fresh);

        let refine = iterations == 1 || iterations % REFINE_EVERY == 0;
        let mut next_point = None;
        if refine {
            if let Some((bound, support)) = certified_bound(&pool.cuts, lo, total) {
                upper = upper.min(bound);
                pool.support = support;
            }
            next_point = kelley_point(&pool.cuts, lo, total);
        }
        if gap_closed(lower, upper, opts.gap_tol) {
            converged = true;
            break;
        }
        if upper <= threshold || (opts.stop_when_feasible && lower > threshold) {
            break;
        }

        if let Some(p) = next_point {
            d = p;
            continue;
        }

        let mean = g.iter().sum::<f64>() / total;
        let tangent: Vec<f64> = g.iter().map(|v| v - mean).collect();
        let norm = tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= f64::EPSILON * g.iter().map(|v| v.abs()).fold(1.0, f64::max) {
            // Supergradient orthogonal to the simplex: restart from the best point.
            d.clone_from(&best_d);
            continue;
        }
        step_index += 1;
        let mut step = radius / ((step_index as f64).sqrt() * norm);
        if upper.is_finite() {
            step = step.min(((upper - value) / (norm * norm)).max(0.0) + radius * 1e-3 / norm);
        }
        let moved: Vec<f64> = d.iter().zip(&tangent).map(|(x, t)| x + step * t).collect();
        d = project_floored_simplex(&moved, lo, total);
    }

    Ok(Outcome {
        best_d,
        lower,
        upper,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(d) = min_k a_k . d`, a polyhedral concave homogeneous function.
    struct MinLinear(Vec<Vec<f64>>);

    impl HomogeneousConcave for MinLinear {
        fn dim(&self) -> usize {
            self.0[0].len()
        }

        fn evaluate(&self, d: &[f64], cuts: &mut Vec<Vec<f64>>) -> Result<f64> {
            let vals: Vec<f64> = self
                .0
                .iter()
                .map(|a| a.iter().zip(d).map(|(x, y)| x * y).sum())
                .collect();
            let k = (0..vals.len())
                .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
                .unwrap();
            cuts.push(self.0[k].clone());
            cuts.extend(self.0.iter().cloned());
            Ok(vals[k])
        }
    }

    #[test]
    fn projection_lands_on_floored_simplex() {
        let p = project_floored_simplex(&[3.0, -1.0, 0.5], 1e-3, 3.0);
        assert!((p.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 1e-3));
        let inside = project_floored_simplex(&[1.0, 1.0, 1.0], 1e-3, 3.0);
        assert_eq!(inside, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn polyhedral_optimum_is_bracketed() {
        // min(2 d1 - d2, -d1 + 3 d2) on d1 + d2 = 2: optimum at d = (8/7, 6/7), value 10/7.
        let f = MinLinear(vec![vec![2.0, -1.0], vec![-1.0, 3.0]]);
        let out = maximize(&f, &SolverOptions::default(), 0.0).unwrap();
        assert!(out.converged);
        assert!((out.lower - 10.0 / 7.0).abs() < 1e-6);
        assert!(out.upper >= 10.0 / 7.0 - 1e-9);
        assert!((out.best_d[0] - 8.0 / 7.0).abs() < 1e-4);
    }

    #[test]
    fn upper_bound_stops_early_below_threshold() {
        let f = MinLinear(vec![vec![-1.0, 0.0], vec![0.0, -1.0]]);
        let out = maximize(&f, &SolverOptions::default(), 1e-8).unwrap();
        assert!(out.upper <= 1e-8);
        assert!(out.lower <= out.upper + 1e-12);
    }
}
