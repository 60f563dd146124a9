//! Block-structured plant matrices, the `AEK` product, and squared matrices.
//!
//! Group and member indices are 0-based throughout the API. Group `i` owns
//! columns `offset(i) .. offset(i) + p_i` of the plant and is paired with
//! output row `i`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

/// Refuse to enumerate more selections than this unless overridden.
pub const DEFAULT_SELECTION_CAP: usize = 1_000_000;

/// Group sizes `p_1 .. p_m` partitioning the plant columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidInput(
                "block structure needs at least one group".into(),
            ));
        }
        if let Some(i) = sizes.iter().position(|&p| p == 0) {
            return Err(Error::InvalidInput(format!("group {i} has size 0")));
        }
        let offsets = sizes
            .iter()
            .scan(0usize, |acc, &p| {
                let start = *acc;
                *acc += p;
                Some(start)
            })
            .collect();
        Ok(Self { sizes, offsets })
    }

    /// Every group has a single member: the plant is square.
    pub fn square(m: usize) -> Result<Self> {
        Self::new(vec![1; m])
    }

    pub fn groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn columns(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, group: usize) -> usize {
        self.sizes[group]
    }

    pub fn offset(&self, group: usize) -> usize {
        self.offsets[group]
    }

    /// Plant column index of member `member` of group `group`.
    pub fn column(&self, group: usize, member: usize) -> usize {
        debug_assert!(member < self.sizes[group]);
        self.offsets[group] + member
    }

    pub fn is_square(&self) -> bool {
        self.sizes.iter().all(|&p| p == 1)
    }

    /// Number of full selections, `prod p_i`, without overflow.
    pub fn full_selection_count(&self) -> u128 {
        self.sizes
            .iter()
            .try_fold(1u128, |acc, &p| acc.checked_mul(p as u128))
            .unwrap_or(u128::MAX)
    }

    fn check_cap(&self, count: u128, cap: usize) -> Result<()> {
        if count > cap as u128 {
            Err(Error::CapExceeded { count, cap })
        } else {
            Ok(())
        }
    }
}

/// Real `m x n` plant matrix with group-indexed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrix {
    structure: BlockStructure,
    data: RealMatrix,
}

impl PlantMatrix {
    pub fn new(structure: BlockStructure, data: RealMatrix) -> Result<Self> {
        if data.nrows() != structure.groups() || data.ncols() != structure.columns() {
            return Err(Error::Dimension(format!(
                "plant is {}x{} but structure {:?} needs {}x{}",
                data.nrows(),
                data.ncols(),
                structure.sizes(),
                structure.groups(),
                structure.columns()
            )));
        }
        Ok(Self { structure, data })
    }

    /// Treats a square matrix as a plant with one input per output.
    pub fn square(data: RealMatrix) -> Result<Self> {
        let structure = BlockStructure::square(data.nrows())?;
        Self::new(structure, data)
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn data(&self) -> &RealMatrix {
        &self.data
    }

    /// Column `a_{i,j}` as a vector of length `m`.
    pub fn column(&self, group: usize, member: usize) -> Vec<f64> {
        let c = self.structure.column(group, member);
        (0..self.data.nrows())
            .map(|r| self.data.get(r, c))
            .collect()
    }
}

fn validate_weights(structure: &BlockStructure, values: &[Vec<f64>], what: &str) -> Result<()> {
    if values.len() != structure.groups() {
        return Err(Error::Dimension(format!(
            "{what} has {} groups, structure has {}",
            values.len(),
            structure.groups()
        )));
    }
    for (i, group) in values.iter().enumerate() {
        if group.len() != structure.size(i) {
            return Err(Error::Dimension(format!(
                "{what} group {i} has {} entries, expected {}",
                group.len(),
                structure.size(i)
            )));
        }
        if let Some(j) = group.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{what} entry ({i},{j}) = {} must be finite and nonnegative",
                group[j]
            )));
        }
    }
    Ok(())
}

macro_rules! group_weights {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            structure: BlockStructure,
            values: Vec<Vec<f64>>,
        }

        impl $name {
            pub fn new(structure: BlockStructure, values: Vec<Vec<f64>>) -> Result<Self> {
                validate_weights(&structure, &values, $what)?;
                Ok(Self { structure, values })
            }

            pub fn ones(structure: &BlockStructure) -> Self {
                let values = structure.sizes().iter().map(|&p| vec![1.0; p]).collect();
                Self { structure: structure.clone(), values }
            }

            pub fn structure(&self) -> &BlockStructure {
                &self.structure
            }

            pub fn values(&self) -> &[Vec<f64>] {
                &self.values
            }

            pub fn get(&self, group: usize, member: usize) -> f64 {
                self.values[group][member]
            }
        }
    };
}

group_weights!(
    /// Compact block-diagonal gain `K`: entry `k(i,j)` weights column `a_{i,j}`.
    GainMatrix,
    "gain"
);

group_weights!(
    /// Nonnegative diagonal detuning `E`, stored per group member.
    Detuning,
    "detuning"
);

impl GainMatrix {
    /// Dense `n x m` block-diagonal form.
    pub fn to_dense(&self) -> RealMatrix {
        let s = &self.structure;
        let mut k = DMatrix::zeros(s.columns(), s.groups());
        for i in 0..s.groups() {
            for j in 0..s.size(i) {
                k[(s.column(i, j), i)] = self.values[i][j];
            }
        }
        RealMatrix::from_dmatrix(k).expect("gains are finite")
    }
}

impl Detuning {
    /// Dense `n x n` diagonal form.
    pub fn to_dense(&self) -> RealMatrix {
        let flat: Vec<f64> = self.values.iter().flatten().copied().collect();
        RealMatrix::from_diagonal(&flat).expect("detuning is finite")
    }

    pub fn zeros(structure: &BlockStructure) -> Self {
        let values = structure.sizes().iter().map(|&p| vec![0.0; p]).collect();
        Self {
            structure: structure.clone(),
            values,
        }
    }

    /// One at the chosen member of every active group, zero elsewhere.
    pub fn one_hot(structure: &BlockStructure, sel: &SquaredSelection) -> Result<Self> {
        sel.validate(structure)?;
        let mut e = Self::zeros(structure);
        for (&g, &c) in sel.active.iter().zip(&sel.choice) {
            e.values[g][c] = 1.0;
        }
        Ok(e)
    }
}

/// Products `ε(i,j)·k(i,j)` plus the in-service flag of each group.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGains {
    pub values: Vec<Vec<f64>>,
    pub in_service: Vec<bool>,
}

impl EffectiveGains {
    pub fn in_service_groups(&self) -> Vec<usize> {
        (0..self.in_service.len())
            .filter(|&i| self.in_service[i])
            .collect()
    }
}

fn require_same_structure(a: &BlockStructure, b: &BlockStructure, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: structures {:?} and {:?} differ",
            a.sizes(),
            b.sizes()
        )))
    }
}

pub fn effective_gains(e: &Detuning, k: &GainMatrix) -> Result<EffectiveGains> {
    require_same_structure(&e.structure, &k.structure, "effective gains")?;
    let values: Vec<Vec<f64>> = e
        .values
        .iter()
        .zip(&k.values)
        .map(|(eg, kg)| eg.iter().zip(kg).map(|(a, b)| a * b).collect())
        .collect();
    let in_service = values.iter().map(|g| g.iter().any(|&v| v > 0.0)).collect();
    Ok(EffectiveGains { values, in_service })
}

/// `A E K` as an `m x m` matrix: column `i` is `sum_j ε(i,j) k(i,j) a_{i,j}`.
pub fn assemble_aek(a: &PlantMatrix, e: &Detuning, k: &GainMatrix) -> Result<RealMatrix> {
    require_same_structure(&a.structure, &e.structure, "plant and detuning")?;
    let gains = effective_gains(e, k)?;
    combine_group_columns(a, &gains.values)
}

/// Column `i` of the result is `sum_j w(i,j) a_{i,j}`.
pub(crate) fn combine_group_columns(a: &PlantMatrix, weights: &[Vec<f64>]) -> Result<RealMatrix> {
    let s = &a.structure;
    let m = s.groups();
    let data = a.data.as_dmatrix();
    let mut out = DMatrix::zeros(m, m);
    for (i, row) in weights.iter().enumerate().take(m) {
        for (j, &w) in row.iter().enumerate().take(s.size(i)) {
            if w != 0.0 {
                let col = data.column(s.column(i, j));
                let mut target = out.column_mut(i);
                target.axpy(w, &col, 1.0);
            }
        }
    }
    RealMatrix::from_dmatrix(out)
}

/// One chosen member per active group; identifies a squared matrix `[A]^k_s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SquaredSelection {
    /// Active groups, strictly increasing.
    pub active: Vec<usize>,
    /// `choice[t]` is the chosen member of group `active[t]`.
    pub choice: Vec<usize>,
}

impl SquaredSelection {
    pub fn full(choice: Vec<usize>) -> Self {
        Self {
            active: (0..choice.len()).collect(),
            choice,
        }
    }

    pub fn order(&self) -> usize {
        self.active.len()
    }

    pub fn validate(&self, structure: &BlockStructure) -> Result<()> {
        if self.active.is_empty() {
            return Err(Error::Index("selection has no active group".into()));
        }
        if self.active.len() != self.choice.len() {
            return Err(Error::Index(format!(
                "{} active groups but {} choices",
                self.active.len(),
                self.choice.len()
            )));
        }
        if self.active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Index(
                "active groups must be strictly increasing".into(),
            ));
        }
        for (&g, &c) in self.active.iter().zip(&self.choice) {
            if g >= structure.groups() {
                return Err(Error::Index(format!(
                    "group {g} out of range for {} groups",
                    structure.groups()
                )));
            }
            if c >= structure.size(g) {
                return Err(Error::Index(format!(
                    "member {c} out of range for group {g} of size {}",
                    structure.size(g)
                )));
            }
        }
        Ok(())
    }
}

/// Lexicographic mixed-radix product over `sizes`.
fn product_choices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0usize; sizes.len()];
    for _ in 0..total {
        out.push(current.clone());
        for pos in (0..sizes.len()).rev() {
            current[pos] += 1;
            if current[pos] < sizes[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    out
}

/// All `prod p_i` full selections in lexicographic order of choices.
pub fn enumerate_full_selections(
    structure: &BlockStructure,
    cap: usize,
) -> Result<Vec<SquaredSelection>> {
    structure.check_cap(structure.full_selection_count(), cap)?;
    Ok(product_choices(structure.sizes())
        .into_iter()
        .map(SquaredSelection::full)
        .collect())
}

/// Increasing `k`-subsets of `0..m` in lexicographic order.
fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == m - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        for t in pos..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// Selections with exactly `k` active groups: subsets in lexicographic order,
/// then member choices in lexicographic order.
pub fn enumerate_reduced_selections(
    structure: &BlockStructure,
    k: usize,
    cap: usize,
) -> Result<Vec<SquaredSelection>> {
    let m = structure.groups();
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!(
            "active-group count {k} outside 1..={m}"
        )));
    }
    let subsets = combinations(m, k);
    let count = subsets.iter().fold(0u128, |acc, s| {
        let prod = s
            .iter()
            .try_fold(1u128, |p, &g| p.checked_mul(structure.size(g) as u128))
            .unwrap_or(u128::MAX);
        acc.saturating_add(prod)
    });
    structure.check_cap(count, cap)?;
    let mut out = Vec::with_capacity(count as usize);
    for active in subsets {
        let sizes: Vec<usize> = active.iter().map(|&g| structure.size(g)).collect();
        for choice in product_choices(&sizes) {
            out.push(SquaredSelection {
                active: active.clone(),
                choice,
            });
        }
    }
    Ok(out)
}

/// `[A]^k_s`: rows of the active groups, the chosen column of each.
pub fn extract_squared(a: &PlantMatrix, sel: &SquaredSelection) -> Result<RealMatrix> {
    sel.validate(&a.structure)?;
    let k = sel.order();
    let cols: Vec<usize> = sel
        .active
        .iter()
        .zip(&sel.choice)
        .map(|(&g, &c)| a.structure.column(g, c))
        .collect();
    RealMatrix::from_dmatrix(DMatrix::from_fn(k, k, |r, c| {
        a.data.get(sel.active[r], cols[c])
    }))
}

/// Every full squared matrix of `a`, in enumeration order.
pub fn full_squared_matrices(a: &PlantMatrix, cap: usize) -> Result<Vec<RealMatrix>> {
    enumerate_full_selections(&a.structure, cap)?
        .iter()
        .map(|s| extract_squared(a, s))
        .collect()
}
