//! Simultaneous positive diagonally balanced dominance: a positive diagonal
//! `D` making every `B_s = M_s D + D M_s^T` strictly column diagonally
//! dominant with a positive diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, Tolerances};
use crate::lyapunov::{common_order, vl_margin, FeasibilityVerdict};
use crate::solver::{maximize, HomogeneousConcave, SolverOptions};

/// Returned by [`dominance_margin`] when some `B_jj <= 0`.
pub const DIAGONAL_SENTINEL: f64 = -1e300;

/// Which balanced matrix is tested for column dominance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceForm {
    /// `M D + D M^T`.
    #[default]
    Symmetric,
    /// Entrywise `|M D| + |D M^T|`; the positive-diagonal clause still uses `M D + D M^T`.
    EntrywiseAbsolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub form: BalanceForm,
    pub verdict: FeasibilityVerdict,
    /// `min_j (B_jj - sum_{i != j} |B_ij|)` per matrix at the best `d`.
    pub per_matrix_margins: Vec<f64>,
    pub diagonal_positive: bool,
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Column terms `B_jj - sum_{i != j} |B_ij|` of one matrix, each with a linear
/// majorant that is tight at `d`.
fn column_terms(m: &RealMatrix, d: &[f64], form: BalanceForm) -> Vec<(f64, Vec<f64>)> {
    let q = d.len();
    (0..q)
        .map(|j| {
            let mut cut = vec![0.0; q];
            let mut value;
            match form {
                BalanceForm::Symmetric => {
                    value = 2.0 * m.get(j, j) * d[j];
                    cut[j] += 2.0 * m.get(j, j);
                    for i in (0..q).filter(|&i| i != j) {
                        let b = m.get(i, j) * d[j] + d[i] * m.get(j, i);
                        let s = sign(b);
                        value -= s * b;
                        cut[j] -= s * m.get(i, j);
                        cut[i] -= s * m.get(j, i);
                    }
                }
                BalanceForm::EntrywiseAbsolute => {
                    value = 2.0 * m.get(j, j).abs() * d[j];
                    cut[j] += 2.0 * m.get(j, j).abs();
                    for i in (0..q).filter(|&i| i != j) {
                        value -= m.get(i, j).abs() * d[j] + d[i] * m.get(j, i).abs();
                        cut[j] -= m.get(i, j).abs();
                        cut[i] -= m.get(j, i).abs();
                    }
                }
            }
            (value, cut)
        })
        .collect()
}

fn diagonal_positive(m: &RealMatrix, d: &[f64]) -> bool {
    (0..d.len()).all(|j| m.get(j, j) * d[j] > 0.0)
}

fn matrix_margin(m: &RealMatrix, d: &[f64], form: BalanceForm) -> f64 {
    if !diagonal_positive(m, d) {
        return DIAGONAL_SENTINEL;
    }
    column_terms(m, d, form)
        .into_iter()
        .map(|(v, _)| v)
        .fold(f64::INFINITY, f64::min)
}

fn check_d(d: &[f64], q: usize) -> Result<()> {
    if d.len() != q {
        return Err(Error::Dimension(format!(
            "diagonal has {} entries, order is {q}",
            d.len()
        )));
    }
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput(
            "diagonal entries must be positive".into(),
        ));
    }
    Ok(())
}

/// Smallest column-dominance margin over all matrices, or [`DIAGONAL_SENTINEL`]
/// if any `B_jj` is not positive.
pub fn dominance_margin(mats: &[RealMatrix], d: &[f64], form: BalanceForm) -> Result<f64> {
    let q = common_order(mats)?;
    check_d(d, q)?;
    Ok(mats
        .iter()
        .map(|m| matrix_margin(m, d, form))
        .fold(f64::INFINITY, f64::min))
}

struct DominanceObjective<'a> {
    mats: &'a [RealMatrix],
    order: usize,
    form: BalanceForm,
}

impl HomogeneousConcave for DominanceObjective<'_> {
    fn dim(&self) -> usize {
        self.order
    }

    // The raw margin is concave; where some diagonal entry is nonpositive it
    // is already nonpositive, so the sentinel is not needed for the search.
    fn evaluate(&self, d: &[f64], cuts: &mut Vec<Vec<f64>>) -> Result<f64> {
        let mut best = f64::INFINITY;
        let mut all = Vec::new();
        let mut active = 0;
        for m in self.mats {
            for (value, cut) in column_terms(m, d, self.form) {
                if value < best {
                    best = value;
                    active = all.len();
                }
                all.push(cut);
            }
        }
        cuts.push(all[active].clone());
        cuts.extend(all);
        Ok(best)
    }
}

pub fn find_balance_d(
    mats: &[RealMatrix],
    form: BalanceForm,
    opts: &SolverOptions,
    tol: &Tolerances,
) -> Result<DominanceReport> {
    let order = common_order(mats)?;
    let objective = DominanceObjective { mats, order, form };
    let out = maximize(&objective, opts, tol.margin_tol)?;
    let verdict = FeasibilityVerdict::from_outcome(out, tol);
    let d = &verdict.best_d;
    let per_matrix_margins = mats.iter().map(|m| matrix_margin(m, d, form)).collect();
    let diag_ok = mats.iter().all(|m| diagonal_positive(m, d));
    Ok(DominanceReport {
        form,
        verdict,
        per_matrix_margins,
        diagonal_positive: diag_ok,
    })
}

/// Checks on this instance that the balancing `D` also satisfies the LMIs.
pub fn dominance_implies_vl(mats: &[RealMatrix], report: &DominanceReport) -> Result<bool> {
    let cert = report.verdict.certificate.as_ref().ok_or_else(|| {
        Error::Precondition("dominance report is not feasible; nothing to check".into())
    })?;
    Ok(vl_margin(mats, &cert.d)? > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{find_common_d, FeasibilityStatus};
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> RealMatrix {
        RealMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Direct evaluation from the dense balanced matrix.
    fn oracle_margin(m: &RealMatrix, d: &[f64]) -> f64 {
        let b = m.lyapunov_form(d).unwrap();
        let q = d.len();
        if (0..q).any(|j| b.get(j, j) <= 0.0) {
            return DIAGONAL_SENTINEL;
        }
        (0..q)
            .map(|j| {
                b.get(j, j)
                    - (0..q)
                        .filter(|&i| i != j)
                        .map(|i| b.get(i, j).abs())
                        .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn margin_examples() {
        let s = BalanceForm::Symmetric;
        assert_abs_diff_eq!(
            dominance_margin(&[RealMatrix::identity(2)], &[1.0, 1.0], s).unwrap(),
            2.0
        );
        let m = mat(&[&[2.0, -1.0], &[-1.0, 2.0]]);
        assert_abs_diff_eq!(dominance_margin(&[m], &[1.0, 1.0], s).unwrap(), 2.0);
        let m = mat(&[&[1.0, 3.0], &[0.0, 1.0]]);
        for d in [[1.0, 1.0], [5.0, 0.2], [0.1, 3.0]] {
            let got = dominance_margin(std::slice::from_ref(&m), &d, s).unwrap();
            assert!(got <= -d[1] + 1e-12);
            assert_abs_diff_eq!(got, oracle_margin(&m, &d), epsilon = 1e-12);
        }
        let neg = mat(&[&[-1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            dominance_margin(&[neg], &[1.0, 1.0], s).unwrap(),
            DIAGONAL_SENTINEL
        );
    }

    #[test]
    fn balance_search_examples() {
        let tol = Tolerances::default();
        let opts = SolverOptions::default();
        let s = BalanceForm::Symmetric;
        let r = find_balance_d(&[RealMatrix::identity(3)], s, &opts, &tol).unwrap();
        assert!(r.verdict.is_feasible());
        assert_abs_diff_eq!(r.verdict.best_objective, 2.0, epsilon = 1e-6);
        assert!(r.diagonal_positive);

        let r = find_balance_d(&[mat(&[&[1.0, 3.0], &[0.0, 1.0]])], s, &opts, &tol).unwrap();
        assert_eq!(r.verdict.status, FeasibilityStatus::Infeasible);

        let mats = [
            mat(&[&[2.0, -1.0], &[-1.0, 2.0]]),
            mat(&[&[3.0, 1.0], &[1.0, 3.0]]),
        ];
        let r = find_balance_d(&mats, s, &opts, &tol).unwrap();
        assert!(r.verdict.is_feasible());
        assert!(r.per_matrix_margins.iter().all(|&g| g > tol.margin_tol));
        assert!(dominance_implies_vl(&mats, &r).unwrap());
    }

    #[test]
    fn implication_examples() {
        let tol = Tolerances::default();
        let opts = SolverOptions::default();
        let r = find_balance_d(
            &[RealMatrix::identity(2)],
            BalanceForm::Symmetric,
            &opts,
            &tol,
        )
        .unwrap();
        assert!(dominance_implies_vl(&[RealMatrix::identity(2)], &r).unwrap());

        let m = [mat(&[&[1.0, 3.0], &[0.0, 1.0]])];
        let r = find_balance_d(&m, BalanceForm::Symmetric, &opts, &tol).unwrap();
        assert!(matches!(
            dominance_implies_vl(&m, &r),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn balance_is_stronger_than_vl() {
        let tol = Tolerances::default();
        let opts = SolverOptions::default();
        let m = [mat(&[&[1.0, 3.0], &[0.0, 1.0]])];
        assert!(find_common_d(&m, &opts, &tol).unwrap().is_feasible());
        let r = find_balance_d(&m, BalanceForm::Symmetric, &opts, &tol).unwrap();
        assert_eq!(r.verdict.status, FeasibilityStatus::Infeasible);
    }

    #[test]
    fn entrywise_absolute_variant() {
        let tol = Tolerances::default();
        let opts = SolverOptions::default();
        let m = [mat(&[&[2.0, -1.0], &[-1.0, 2.0]])];
        let r = find_balance_d(&m, BalanceForm::EntrywiseAbsolute, &opts, &tol).unwrap();
        assert!(r.verdict.is_feasible());
        assert_abs_diff_eq!(
            dominance_margin(&m, &[1.0, 1.0], BalanceForm::EntrywiseAbsolute).unwrap(),
            2.0
        );
    }
}
