//! Card-game weights over full selections and the aggregation identity that
//! rewrites `A E K` as `(sum_s γ_s [A]_s) D`.
//!
//! A ratio table `κ(i, j)` (with `κ(i, 0) = 1`) determines the unique tensor
//! `γ(ζ) = prod_i κ(i, ζ_i)` satisfying `γ(0, .., 0) = 1` and the per-coordinate
//! ratio recursion. Summing `γ` over all selections that pick member `j` of
//! group `i` gives `κ(i, j) * prod_{k != i} S_k` with `S_k = sum_j κ(k, j)`.

use serde::{Deserialize, Serialize};

use crate::block::{
    assemble_aek, combine_group_columns, effective_gains, BlockStructure, Detuning, GainMatrix,
    PlantMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

const RATIO_REL_TOL: f64 = 1e-12;

/// Desired per-group ratios relative to the group's first member.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    structure: BlockStructure,
    ratios: Vec<Vec<f64>>,
}

impl RatioTable {
    pub fn new(structure: BlockStructure, ratios: Vec<Vec<f64>>) -> Result<Self> {
        if ratios.len() != structure.groups()
            || ratios
                .iter()
                .zip(structure.sizes())
                .any(|(r, &p)| r.len() != p)
        {
            return Err(Error::Dimension(
                "ratio table does not match block structure".into(),
            ));
        }
        for (i, r) in ratios.iter().enumerate() {
            if r[0] != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "ratio ({i},0) must be exactly 1"
                )));
            }
            if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "group {i} has a nonpositive ratio"
                )));
            }
        }
        Ok(Self { structure, ratios })
    }

    pub fn uniform(structure: &BlockStructure) -> Self {
        let ratios = structure.sizes().iter().map(|&p| vec![1.0; p]).collect();
        Self {
            structure: structure.clone(),
            ratios,
        }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn get(&self, group: usize, member: usize) -> f64 {
        self.ratios[group][member]
    }
}

/// Positive weights over all full selections, stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTensor {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

/// Advances a mixed-radix counter; returns false after the last index.
fn advance(index: &mut [usize], sizes: &[usize]) -> bool {
    for pos in (0..sizes.len()).rev() {
        index[pos] += 1;
        if index[pos] < sizes[pos] {
            return true;
        }
        index[pos] = 0;
    }
    false
}

impl GammaTensor {
    /// Wraps raw weights; only positivity and length are checked.
    pub fn from_values(structure: &BlockStructure, values: Vec<f64>, cap: usize) -> Result<Self> {
        let count = structure.full_selection_count();
        if count > cap as u128 {
            return Err(Error::CapExceeded { count, cap });
        }
        if values.len() as u128 != count {
            return Err(Error::Dimension(format!(
                "{} weights for {count} selections",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("gamma weights must be positive".into()));
        }
        Ok(Self {
            sizes: structure.sizes().to_vec(),
            values,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lexicographic position of the multi-index `zeta`.
    pub fn offset(&self, zeta: &[usize]) -> usize {
        zeta.iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&z, &p)| acc * p + z)
    }

    pub fn get(&self, zeta: &[usize]) -> f64 {
        self.values[self.offset(zeta)]
    }

    /// Calls `f(zeta, gamma)` for every selection in lexicographic order.
    pub fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut index = vec![0; self.sizes.len()];
        for &v in &self.values {
            f(&index, v);
            advance(&mut index, &self.sizes);
        }
    }

    /// `c(i, j) = sum over selections with zeta_i = j of gamma`.
    pub fn marginal_sums(&self) -> Vec<Vec<f64>> {
        let mut sums: Vec<Vec<f64>> = self.sizes.iter().map(|&p| vec![0.0; p]).collect();
        self.for_each(|zeta, g| {
            for (i, &z) in zeta.iter().enumerate() {
                sums[i][z] += g;
            }
        });
        sums
    }
}

/// Product tensor without positivity checks; zero ratios are allowed.
fn product_tensor(sizes: &[usize], ratios: &[Vec<f64>]) -> GammaTensor {
    let total: usize = sizes.iter().product();
    let mut values = Vec::with_capacity(total);
    let mut index = vec![0; sizes.len()];
    for _ in 0..total {
        values.push(
            index
                .iter()
                .enumerate()
                .map(|(i, &z)| ratios[i][z])
                .product(),
        );
        advance(&mut index, sizes);
    }
    GammaTensor {
        sizes: sizes.to_vec(),
        values,
    }
}

pub fn build_gamma(ratios: &RatioTable, cap: usize) -> Result<GammaTensor> {
    let count = ratios.structure.full_selection_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }
    Ok(product_tensor(ratios.structure.sizes(), &ratios.ratios))
}

/// Both defining conditions: normalization at the all-first selection and
/// `γ(.., j, ..) = γ(.., 0, ..) κ(i, j)` for every index and coordinate.
pub fn satisfies_recursion(gamma: &GammaTensor, ratios: &RatioTable) -> bool {
    if gamma.sizes != ratios.structure.sizes() {
        return false;
    }
    let origin = vec![0; gamma.sizes.len()];
    if gamma.get(&origin) != 1.0 {
        return false;
    }
    let mut ok = true;
    gamma.for_each(|zeta, g| {
        for (i, &z) in zeta.iter().enumerate() {
            let mut base = zeta.to_vec();
            base[i] = 0;
            let expected = gamma.get(&base) * ratios.get(i, z);
            if (g - expected).abs() > RATIO_REL_TOL * expected.abs().max(g.abs()) {
                ok = false;
            }
        }
    });
    ok
}

/// `payoff(k, j) = (1/m) * sum over selections with zeta_k = j of gamma`.
pub fn card_payoffs(gamma: &GammaTensor) -> Vec<Vec<f64>> {
    let m = gamma.sizes.len() as f64;
    gamma
        .marginal_sums()
        .into_iter()
        .map(|row| row.into_iter().map(|c| c / m).collect())
        .collect()
}

/// True when the tensor is normalized and every card's payoff stands to its
/// group's first card in the ratio the tensor encodes along that axis.
pub fn verify_ratio_property(gamma: &GammaTensor) -> bool {
    let origin = vec![0; gamma.sizes.len()];
    if gamma.get(&origin) != 1.0 {
        return false;
    }
    let payoffs = card_payoffs(gamma);
    for (k, row) in payoffs.iter().enumerate() {
        for (j, &pay) in row.iter().enumerate() {
            let mut axis = origin.clone();
            axis[k] = j;
            let kappa = gamma.get(&axis);
            let ratio = pay / row[0];
            if (ratio - kappa).abs() > RATIO_REL_TOL * kappa.abs().max(1.0) {
                return false;
            }
        }
    }
    true
}

/// `(sum_s γ_s [A]_s) D`: column `i` is `d_i * sum_j c(i, j) a_{i,j}`.
pub fn aggregation_weights(a: &PlantMatrix, gamma: &GammaTensor, d: &[f64]) -> Result<RealMatrix> {
    let s = a.structure();
    if gamma.sizes != s.sizes() {
        return Err(Error::Dimension(
            "gamma tensor does not match plant structure".into(),
        ));
    }
    if d.len() != s.groups() {
        return Err(Error::Dimension(format!(
            "{} diagonal entries for {} groups",
            d.len(),
            s.groups()
        )));
    }
    let weights: Vec<Vec<f64>> = gamma
        .marginal_sums()
        .into_iter()
        .zip(d)
        .map(|(row, &di)| row.into_iter().map(|c| c * di).collect())
        .collect();
    combine_group_columns(a, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationCheck {
    /// `max |(sum γ_s [A]_s) D - A E K|` with the normalized diagonal.
    pub residual: f64,
    pub holds: bool,
    /// `d_i = k̃(i, anchor_i) / C_i`.
    pub d_used: Vec<f64>,
    /// Per-column factors `C_i = prod_{k != i} S_k`.
    pub scaling: Vec<f64>,
    /// Member used as the unit-ratio reference in each group.
    pub anchors: Vec<usize>,
    /// Residual when `d_i = k̃(i, anchor_i)` is used without the column factor.
    pub unscaled_residual: f64,
}

/// Builds γ from the effective gains of `E K` and checks that the aggregated
/// squared matrices reproduce `A E K` exactly.
pub fn verify_aggregation_identity(
    a: &PlantMatrix,
    e: &Detuning,
    k: &GainMatrix,
    cap: usize,
    tol: f64,
) -> Result<AggregationCheck> {
    let s = a.structure();
    let gains = effective_gains(e, k)?;
    if let Some(off) = gains.in_service.iter().position(|&on| !on) {
        return Err(Error::Precondition(format!(
            "group {off} is out of service; analyse the reduced-order subsystem instead"
        )));
    }
    let count = s.full_selection_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }

    let anchors: Vec<usize> = gains
        .values
        .iter()
        .map(|g| g.iter().position(|&v| v > 0.0).expect("group in service"))
        .collect();
    let ratios: Vec<Vec<f64>> = gains
        .values
        .iter()
        .zip(&anchors)
        .map(|(g, &an)| g.iter().map(|v| v / g[an]).collect())
        .collect();
    let gamma = product_tensor(s.sizes(), &ratios);

    let group_sums: Vec<f64> = ratios.iter().map(|r| r.iter().sum()).collect();
    let scaling: Vec<f64> = (0..s.groups())
        .map(|i| {
            group_sums
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, v)| v)
                .product()
        })
        .collect();
    let anchor_gain: Vec<f64> = anchors
        .iter()
        .enumerate()
        .map(|(i, &an)| gains.values[i][an])
        .collect();
    let d_used: Vec<f64> = anchor_gain
        .iter()
        .zip(&scaling)
        .map(|(g, c)| g / c)
        .collect();

    let aek = assemble_aek(a, e, k)?;
    let residual = aggregation_weights(a, &gamma, &d_used)?.max_abs_diff(&aek)?;
    let unscaled_residual = aggregation_weights(a, &gamma, &anchor_gain)?.max_abs_diff(&aek)?;
    Ok(AggregationCheck {
        residual,
        holds: residual <= tol,
        d_used,
        scaling,
        anchors,
        unscaled_residual,
    })
}
