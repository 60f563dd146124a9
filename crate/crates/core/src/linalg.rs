//! Dense real-matrix predicates and spectral primitives.
//!
//! Stability is always *positive* stability here: a square matrix is stable
//! when every eigenvalue has a strictly positive real part. This is the
//! convention under which `AD + DA^T > 0` implies stability of `AD`.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_QR_ITERATIONS: usize = 10_000;

/// A dense real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix(DMatrix<f64>);

impl RealMatrix {
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "matrix entry at column-major offset {pos} is not finite"
            )));
        }
        Ok(Self(m))
    }

    /// Builds a matrix from row slices. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {ncols}",
                rows[bad].len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn from_row_slice(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Dimension(format!(
                "{} entries for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(nrows, ncols, data))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self(DMatrix::zeros(nrows, ncols))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Self::from_dmatrix(DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { d[i] } else { 0.0 },
        ))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.0.is_square()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.nrows())
            .map(|i| (0..self.ncols()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// `self * diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "{} column scales for {} columns",
                d.len(),
                self.ncols()
            )));
        }
        let mut out = self.0.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= d[j];
        }
        Self::from_dmatrix(out)
    }

    /// `M D + D M^T` for a diagonal `D = diag(d)`.
    pub fn lyapunov_form(&self, d: &[f64]) -> Result<Self> {
        require_square(self)?;
        let md = self.scale_columns(d)?;
        Ok(Self(&md.0 + md.0.transpose()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.0.shape() != other.0.shape() {
            return Err(Error::Dimension(format!(
                "shapes {:?} and {:?} differ",
                self.0.shape(),
                other.0.shape()
            )));
        }
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

/// Numerical thresholds shared by every predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Real parts must exceed this to count as positive.
    pub eig_tol: f64,
    /// Relative tolerance for symmetry and normality checks.
    pub sym_tol: f64,
    /// Margins must exceed this to certify an LMI or dominance property.
    pub margin_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eig_tol: 1e-9,
            sym_tol: 1e-9,
            margin_tol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eig_tol", self.eig_tol),
            ("sym_tol", self.sym_tol),
            ("margin_tol", self.margin_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Eigenvalues of a real square matrix, sorted by real part then imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Smallest real part, or `+inf` for the empty spectrum.
    pub fn min_real(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn as_pairs(&self) -> Vec<(f64, f64)> {
        self.eigenvalues.iter().map(|z| (z.re, z.im)).collect()
    }
}

fn require_square(m: &RealMatrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn eigenvalues(m: &RealMatrix) -> Result<Spectrum> {
    require_square(m)?;
    let n = m.nrows();
    let mut eigenvalues: Vec<Complex<f64>> = match n {
        0 => Vec::new(),
        1 => vec![Complex::new(m.get(0, 0), 0.0)],
        _ => {
            let schur = Schur::try_new(m.0.clone(), f64::EPSILON, MAX_QR_ITERATIONS)
                .ok_or_else(|| {
                    Error::Numerical(format!(
                        "real Schur iteration did not converge for a {n}x{n} matrix (max |a_ij| = {:e})",
                        m.max_abs()
                    ))
                })?;
            schur.complex_eigenvalues().iter().copied().collect()
        }
    };
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(Spectrum { eigenvalues })
}

/// Smallest eigenvalue real part. `+inf` for a 0x0 matrix.
pub fn min_real_eig(m: &RealMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?.min_real())
}

pub fn positive_stable(m: &RealMatrix, tol: &Tolerances) -> Result<bool> {
    Ok(min_real_eig(m)? > tol.eig_tol)
}

fn symmetric_eigen(s: &RealMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    require_square(s)?;
    let sym = (&s.0 + s.0.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, f64::EPSILON, MAX_QR_ITERATIONS).ok_or_else(|| {
        Error::Numerical(format!(
            "symmetric eigensolver did not converge for a {0}x{0} matrix",
            s.nrows()
        ))
    })
}

/// Smallest eigenvalue of `(S + S^T) / 2`.
pub fn min_symmetric_eig(s: &RealMatrix) -> Result<f64> {
    if s.nrows() == 0 {
        require_square(s)?;
        return Ok(f64::INFINITY);
    }
    let eig = symmetric_eigen(s)?;
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Full symmetric eigendecomposition of `(S + S^T) / 2`, eigenvalues ascending.
/// Eigenvectors are returned as unit columns.
pub fn symmetric_eigenpairs(s: &RealMatrix) -> Result<Vec<(f64, Vec<f64>)>> {
    if s.nrows() == 0 {
        require_square(s)?;
        return Ok(Vec::new());
    }
    let eig = symmetric_eigen(s)?;
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &lambda)| (lambda, eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

pub fn is_normal(m: &RealMatrix, tol: &Tolerances) -> Result<bool> {
    require_square(m)?;
    let a = &m.0;
    let commutator = a * a.transpose() - a.transpose() * a;
    let residual = commutator.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let scale = m.max_abs().powi(2).max(1.0);
    Ok(residual <= tol.sym_tol * scale)
}

/// Class F: every off-diagonal entry is nonnegative.
pub fn in_class_f(m: &RealMatrix, tol: &Tolerances) -> Result<bool> {
    require_square(m)?;
    let n = m.nrows();
    Ok((0..n).all(|i| (0..n).all(|j| i == j || m.get(i, j) >= -tol.eig_tol)))
}

/// Per-column dominance margins `|m_jj| - sum_{i != j} |m_ij|`.
pub fn column_dominance_margins(m: &RealMatrix) -> Result<Vec<f64>> {
    require_square(m)?;
    let n = m.nrows();
    Ok((0..n)
        .map(|j| {
            let off: f64 = (0..n).filter(|&i| i != j).map(|i| m.get(i, j).abs()).sum();
            m.get(j, j).abs() - off
        })
        .collect())
}

/// Strict column dominance over the whole column, with margin `margin_tol`.
pub fn strictly_column_diag_dominant(m: &RealMatrix, margin_tol: f64) -> Result<bool> {
    Ok(column_dominance_margins(m)?.iter().all(|&g| g > margin_tol))
}

/// Rows and columns of `m` restricted to `idx` (0-based, strictly increasing).
pub fn principal_submatrix(m: &RealMatrix, idx: &[usize]) -> Result<RealMatrix> {
    require_square(m)?;
    if idx.is_empty() {
        return Err(Error::Index("principal index set is empty".into()));
    }
    if let Some(w) = idx.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Index(format!(
            "principal index set not strictly increasing at {} >= {}",
            w[0], w[1]
        )));
    }
    let last = *idx.last().unwrap();
    if last >= m.nrows() {
        return Err(Error::Index(format!(
            "index {last} out of range for order {}",
            m.nrows()
        )));
    }
    let k = idx.len();
    Ok(RealMatrix(DMatrix::from_fn(k, k, |r, c| {
        m.get(idx[r], idx[c])
    })))
}

/// All nonempty subsets of `0..n` as increasing index lists, ordered by bitmask.
pub fn nonempty_subsets(items: &[usize]) -> Vec<Vec<usize>> {
    let n = items.len();
    assert!(
        n < usize::BITS as usize,
        "subset enumeration over {n} items"
    );
    (1usize..(1 << n))
        .map(|mask| {
            (0..n)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| items[b])
                .collect()
        })
        .collect()
}
