//! Diagonal Lyapunov certificates: individual and simultaneous
//! Volterra-Lyapunov stability, plus sampled D-stability checks.
//!
//! For a family of square matrices `M_s` and a positive diagonal `D`, the
//! objective `f(d) = min_s lambda_min(M_s D + D M_s^T)` is concave and
//! positively homogeneous in `d`, so the search runs over the floored simplex
//! `sum d_i = q` and a positive optimum certifies the LMIs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    min_real_eig, min_symmetric_eig, nonempty_subsets, principal_submatrix, symmetric_eigenpairs,
    RealMatrix, Tolerances,
};
use crate::sampling::{keyed_rng, log_uniform};
use crate::solver::{maximize, HomogeneousConcave, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCertificate {
    /// Diagonal of `D`, normalized so that `sum d_i` equals the order.
    pub d: Vec<f64>,
    /// Achieved minimum eigenvalue (or dominance margin) at `d`.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    /// Present exactly when the status is feasible.
    pub certificate: Option<DiagonalCertificate>,
    /// Best objective value found (a lower bound on the optimum).
    pub best_objective: f64,
    /// Certified upper bound on the optimum.
    pub upper_bound: f64,
    /// Diagonal achieving `best_objective`.
    pub best_d: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }

    pub(crate) fn from_outcome(out: crate::solver::Outcome, tol: &Tolerances) -> Self {
        let status = if out.lower > tol.margin_tol {
            FeasibilityStatus::Feasible
        } else if out.upper <= tol.margin_tol {
            FeasibilityStatus::Infeasible
        } else {
            FeasibilityStatus::Unknown
        };
        let certificate = (status == FeasibilityStatus::Feasible).then(|| DiagonalCertificate {
            d: out.best_d.clone(),
            margin: out.lower,
        });
        Self {
            status,
            certificate,
            best_objective: out.lower,
            upper_bound: out.upper,
            best_d: out.best_d,
            iterations: out.iterations,
            converged: out.converged,
        }
    }
}

pub(crate) fn common_order(mats: &[RealMatrix]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidInput("matrix family is empty".into()))?;
    let q = first.nrows();
    if let Some(bad) = mats.iter().position(|m| !m.is_square() || m.nrows() != q) {
        return Err(Error::Dimension(format!(
            "matrix {bad} is {}x{}, family order is {q}",
            mats[bad].nrows(),
            mats[bad].ncols()
        )));
    }
    if q == 0 {
        return Err(Error::InvalidInput("matrix family has order 0".into()));
    }
    Ok(q)
}

fn check_diagonal(d: &[f64], q: usize) -> Result<()> {
    if d.len() != q {
        return Err(Error::Dimension(format!(
            "diagonal has {} entries, order is {q}",
            d.len()
        )));
    }
    if let Some(i) = d.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "d[{i}] = {} is not positive",
            d[i]
        )));
    }
    Ok(())
}

/// `min_s lambda_min(M_s D + D M_s^T)`.
pub fn vl_margin(mats: &[RealMatrix], d: &[f64]) -> Result<f64> {
    let q = common_order(mats)?;
    check_diagonal(d, q)?;
    mats.iter()
        .map(|m| min_symmetric_eig(&m.lyapunov_form(d)?))
        .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// `c_i = 2 v_i (M^T v)_i`, so that `v^T (M D + D M^T) v = c . d`.
fn rayleigh_cut(m: &RealMatrix, v: &[f64]) -> Vec<f64> {
    let q = v.len();
    (0..q)
        .map(|i| {
            let mt_v: f64 = (0..q).map(|k| m.get(k, i) * v[k]).sum();
            2.0 * v[i] * mt_v
        })
        .collect()
}

struct VlObjective<'a> {
    mats: &'a [RealMatrix],
    order: usize,
}

impl HomogeneousConcave for VlObjective<'_> {
    fn dim(&self) -> usize {
        self.order
    }

    fn evaluate(&self, d: &[f64], cuts: &mut Vec<Vec<f64>>) -> Result<f64> {
        let mut best = f64::INFINITY;
        let mut active = 0;
        let mut spectra = Vec::with_capacity(self.mats.len());
        for (s, m) in self.mats.iter().enumerate() {
            let pairs = symmetric_eigenpairs(&m.lyapunov_form(d)?)?;
            if pairs[0].0 < best {
                best = pairs[0].0;
                active = s;
            }
            spectra.push(pairs);
        }
        cuts.push(rayleigh_cut(&self.mats[active], &spectra[active][0].1));
        let window = 1e-3 * (1.0 + best.abs());
        for (m, pairs) in self.mats.iter().zip(&spectra) {
            for (k, (lambda, v)) in pairs.iter().enumerate() {
                if k == 0 || *lambda <= best + window {
                    cuts.push(rayleigh_cut(m, v));
                }
            }
        }
        Ok(best)
    }
}

/// Searches for one positive diagonal `D` with `M_s D + D M_s^T > 0` for all `s`.
pub fn find_common_d(
    mats: &[RealMatrix],
    opts: &SolverOptions,
    tol: &Tolerances,
) -> Result<FeasibilityVerdict> {
    let order = common_order(mats)?;
    let objective = VlObjective { mats, order };
    let out = maximize(&objective, opts, tol.margin_tol)?;
    Ok(FeasibilityVerdict::from_outcome(out, tol))
}

/// Runs [`find_common_d`] on each matrix separately.
pub fn find_individual_ds(
    mats: &[RealMatrix],
    opts: &SolverOptions,
    tol: &Tolerances,
) -> Result<Vec<FeasibilityVerdict>> {
    common_order(mats)?;
    mats.par_iter()
        .map(|m| find_common_d(std::slice::from_ref(m), opts, tol))
        .collect()
}

/// Recomputes the margin at `cert.d` and checks it against the claimed value.
pub fn verify_certificate(mats: &[RealMatrix], cert: &DiagonalCertificate, tol: f64) -> bool {
    match vl_margin(mats, &cert.d) {
        Ok(actual) => (actual - cert.margin).abs() <= tol * cert.margin.abs().max(1.0),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DStabilityReport {
    /// False only with a concrete refuting witness.
    pub holds: bool,
    pub samples: usize,
    /// Smallest eigenvalue real part over all sampled `D` and principal subsets.
    pub worst_margin: f64,
    pub worst_d: Vec<f64>,
    pub worst_subset: Vec<usize>,
}

/// Samples positive diagonals `D` (log-uniform on `[1e-3, 1e3]`) and checks
/// positive stability of every principal submatrix of `M D`.
pub fn sampled_d_stability(
    m: &RealMatrix,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<DStabilityReport> {
    let q = common_order(std::slice::from_ref(m))?;
    let subsets = nonempty_subsets(&(0..q).collect::<Vec<_>>());
    let mut report = DStabilityReport {
        holds: true,
        samples: 0,
        worst_margin: f64::INFINITY,
        worst_d: vec![1.0; q],
        worst_subset: Vec::new(),
    };
    for sample in 0..n_samples.max(1) {
        let mut rng = keyed_rng(seed, &[sample as u64]);
        let d: Vec<f64> = (0..q).map(|_| log_uniform(&mut rng, -3.0, 3.0)).collect();
        let md = m.scale_columns(&d)?;
        for idx in &subsets {
            let margin = min_real_eig(&principal_submatrix(&md, idx)?)?;
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_d.clone_from(&d);
                report.worst_subset.clone_from(idx);
            }
        }
        report.samples += 1;
    }
    report.holds = report.worst_margin > tol.eig_tol;
    Ok(report)
}
