//! Seeded counterexample search for the claim that individual
//! Volterra-Lyapunov stability of every full squared matrix is enough for the
//! decentralized eigenvalue condition.
//!
//! With a strictly positive gain `K` the set `{E K : E >= 0}` covers every
//! nonnegative effective gain, so all positive gains are equivalent and the
//! canonical all-ones gain is used. Each witness is additionally transferred
//! to randomly drawn positive gains (`E' = E K / K'`) and re-checked there.
//! A candidate is evidence against the claim for positive gains only; gains
//! with zero entries are not searched.

use std::collections::HashSet;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::block::{full_squared_matrices, BlockStructure, GainMatrix, PlantMatrix};
use crate::dus::{
    falsify_condition, sweep_condition, verify_witness, DusReport, DusWitness, FalsifyOutcome,
    PipelineConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, Tolerances};
use crate::lyapunov::{
    find_individual_ds, verify_certificate, DiagonalCertificate, FeasibilityVerdict,
};
use crate::sampling::keyed_rng;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryDistribution {
    /// Every entry uniform on `[-a, a]`.
    Uniform,
    /// Off-diagonal entries uniform on `[0, a]`.
    ClassFShifted,
    /// Off-diagonal entries shared across group members and mirrored, so every
    /// squared matrix is symmetric.
    Symmetric,
}

/// Generator for a reproducible stream of plant matrices.
///
/// Entry `(r, column of group g)` is "diagonal" when `r == g`; diagonal entries
/// are drawn uniform on `[-a, a]` and shifted by `diag_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub sizes: Vec<usize>,
    pub distribution: EntryDistribution,
    pub scale: f64,
    pub diag_shift: f64,
    pub seed: u64,
    /// Resample until every full squared matrix is individually VL stable.
    pub require_individual_vl: bool,
    pub max_retries: usize,
}

impl InstanceSpec {
    pub fn new(sizes: Vec<usize>, distribution: EntryDistribution, seed: u64) -> Self {
        Self {
            sizes,
            distribution,
            scale: 1.0,
            diag_shift: 0.0,
            seed,
            require_individual_vl: true,
            max_retries: 1000,
        }
    }

    fn validate(&self) -> Result<BlockStructure> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "entry scale {} must be positive",
                self.scale
            )));
        }
        if !self.diag_shift.is_finite() {
            return Err(Error::InvalidInput("diagonal shift must be finite".into()));
        }
        BlockStructure::new(self.sizes.clone())
    }
}

fn solver_for_rejection() -> SolverOptions {
    SolverOptions {
        stop_when_feasible: true,
        ..SolverOptions::default()
    }
}

#[allow(clippy::needless_range_loop)]
fn draw_plant(
    spec: &InstanceSpec,
    structure: &BlockStructure,
    keys: &[u64],
) -> Result<PlantMatrix> {
    let mut rng = keyed_rng(spec.seed, keys);
    let m = structure.groups();
    let a = spec.scale;
    let mut data = vec![vec![0.0; structure.columns()]; m];
    let shared: Vec<Vec<f64>> = match spec.distribution {
        EntryDistribution::Symmetric => {
            let mut s = vec![vec![0.0; m]; m];
            for r in 0..m {
                for c in r + 1..m {
                    let v = rng.random_range(-a..=a);
                    s[r][c] = v;
                    s[c][r] = v;
                }
            }
            s
        }
        _ => Vec::new(),
    };
    for g in 0..m {
        for j in 0..structure.size(g) {
            let col = structure.column(g, j);
            for r in 0..m {
                data[r][col] = if r == g {
                    rng.random_range(-a..=a) + spec.diag_shift
                } else {
                    match spec.distribution {
                        EntryDistribution::Uniform => rng.random_range(-a..=a),
                        EntryDistribution::ClassFShifted => rng.random_range(0.0..=a),
                        EntryDistribution::Symmetric => shared[r][g],
                    }
                };
            }
        }
    }
    PlantMatrix::new(structure.clone(), RealMatrix::from_rows(&data)?)
}

fn individual_certificates(
    a: &PlantMatrix,
    cap: usize,
    opts: &SolverOptions,
    tol: &Tolerances,
) -> Result<Option<Vec<DiagonalCertificate>>> {
    let mats = full_squared_matrices(a, cap)?;
    let verdicts = find_individual_ds(&mats, opts, tol)?;
    Ok(verdicts.into_iter().map(|v| v.certificate).collect())
}

/// The `index`-th matrix of the stream described by `spec`.
pub fn random_instance(
    spec: &InstanceSpec,
    index: u64,
    cap: usize,
    tol: &Tolerances,
) -> Result<PlantMatrix> {
    let structure = spec.validate()?;
    let attempts = if spec.require_individual_vl {
        spec.max_retries.max(1)
    } else {
        1
    };
    for attempt in 0..attempts {
        let a = draw_plant(spec, &structure, &[index, attempt as u64])?;
        if !spec.require_individual_vl
            || individual_certificates(&a, cap, &solver_for_rejection(), tol)?.is_some()
        {
            return Ok(a);
        }
    }
    Err(Error::RetriesExhausted { attempts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleCandidate {
    pub instance_index: u64,
    pub sizes: Vec<usize>,
    /// Plant rows.
    pub a: Vec<Vec<f64>>,
    /// One certificate per full squared matrix, in enumeration order.
    pub individual_certs: Vec<DiagonalCertificate>,
    /// Violating detuning for the all-ones gain.
    pub witness: DusWitness,
    pub violation_margin: f64,
    /// Random positive gains to which the witness was transferred and re-verified.
    pub gain_transfers: usize,
    /// SHA-256 of the group sizes and plant entry bits.
    pub matrix_hash: String,
}

pub fn matrix_hash(a: &PlantMatrix) -> String {
    let mut h = Sha256::new();
    for &p in a.structure().sizes() {
        h.update((p as u64).to_le_bytes());
    }
    for row in a.data().rows() {
        for v in row {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Candidates must violate by more than ten eigenvalue tolerances.
pub fn violation_threshold(tol: &Tolerances) -> f64 {
    -10.0 * tol.eig_tol
}

fn transferred_witness(w: &DusWitness, gain: &[Vec<f64>]) -> DusWitness {
    let e =
        w.e.iter()
            .zip(gain)
            .map(|(eg, kg)| eg.iter().zip(kg).map(|(e, k)| e / k).collect())
            .collect();
    DusWitness { e, ..w.clone() }
}

fn transfer_margin(a: &PlantMatrix, w: &DusWitness, gain: &[Vec<f64>]) -> Result<f64> {
    let k = GainMatrix::new(a.structure().clone(), gain.to_vec())?;
    let moved = transferred_witness(w, gain);
    let det = crate::block::Detuning::new(a.structure().clone(), moved.e)?;
    let aek = crate::block::assemble_aek(a, &det, &k)?;
    crate::linalg::min_real_eig(&crate::linalg::principal_submatrix(&aek, &w.subset)?)
}

/// Independent re-check of every claim a candidate makes.
pub fn verify_candidate(c: &CounterexampleCandidate, cap: usize, tol: &Tolerances) -> bool {
    let check = || -> Result<bool> {
        let structure = BlockStructure::new(c.sizes.clone())?;
        let a = PlantMatrix::new(structure, RealMatrix::from_rows(&c.a)?)?;
        if matrix_hash(&a) != c.matrix_hash {
            return Ok(false);
        }
        let mats = full_squared_matrices(&a, cap)?;
        if mats.len() != c.individual_certs.len() {
            return Ok(false);
        }
        for (m, cert) in mats.iter().zip(&c.individual_certs) {
            if cert.margin <= tol.margin_tol
                || !verify_certificate(std::slice::from_ref(m), cert, 1e-9)
            {
                return Ok(false);
            }
        }
        let k = GainMatrix::ones(a.structure());
        Ok(verify_witness(&a, &k, &c.witness, tol)
            && c.witness.margin <= c.violation_margin + tol.eig_tol
            && c.violation_margin < violation_threshold(tol))
    };
    check().unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub spec: InstanceSpec,
    /// Number of instances to draw.
    pub budget: usize,
    pub falsify_budget: usize,
    /// Random positive gains each witness is transferred to.
    pub gain_samples: usize,
    pub cap: usize,
    /// Instances evaluated in parallel per batch.
    pub batch: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub instances_drawn: usize,
    pub instances_tested: usize,
    pub instances_skipped: usize,
    pub candidates: usize,
    pub duplicates: usize,
}

enum InstanceResult {
    Skipped,
    Clean,
    Candidate(Box<CounterexampleCandidate>),
}

fn evaluate_instance(cfg: &SearchConfig, index: u64, tol: &Tolerances) -> Result<InstanceResult> {
    let a = match random_instance(&cfg.spec, index, cfg.cap, tol) {
        Ok(a) => a,
        Err(Error::RetriesExhausted { .. }) => return Ok(InstanceResult::Skipped),
        Err(e) => return Err(e),
    };
    let certs = match individual_certificates(&a, cfg.cap, &SolverOptions::default(), tol)? {
        Some(c) => c,
        None => return Ok(InstanceResult::Skipped),
    };
    let k = GainMatrix::ones(a.structure());
    let threshold = violation_threshold(tol);
    let out = falsify_condition(
        &a,
        &k,
        cfg.falsify_budget,
        cfg.spec.seed ^ index.rotate_left(17),
        threshold,
    )?;
    let Some(witness) = out.witness else {
        return Ok(InstanceResult::Clean);
    };

    let mut rng = keyed_rng(cfg.spec.seed, &[0x6A1E, index]);
    for _ in 0..cfg.gain_samples {
        let gain: Vec<Vec<f64>> = a
            .structure()
            .sizes()
            .iter()
            .map(|&p| {
                (0..p)
                    .map(|_| 10f64.powf(rng.random_range(-2.0..2.0)))
                    .collect()
            })
            .collect();
        if transfer_margin(&a, &witness, &gain)? >= threshold {
            return Ok(InstanceResult::Clean);
        }
    }

    let candidate = CounterexampleCandidate {
        instance_index: index,
        sizes: a.structure().sizes().to_vec(),
        a: a.data().rows(),
        individual_certs: certs,
        violation_margin: witness.margin,
        witness,
        gain_transfers: cfg.gain_samples,
        matrix_hash: matrix_hash(&a),
    };
    if verify_candidate(&candidate, cfg.cap, tol) {
        Ok(InstanceResult::Candidate(Box::new(candidate)))
    } else {
        Ok(InstanceResult::Clean)
    }
}

/// Draws `cfg.budget` instances, evaluates them in parallel batches, and hands
/// each new (deduplicated) candidate to `sink` in instance order.
pub fn search_conjecture(
    cfg: &SearchConfig,
    tol: &Tolerances,
    mut sink: impl FnMut(&CounterexampleCandidate) -> Result<()>,
) -> Result<SearchSummary> {
    cfg.spec.validate()?;
    let mut summary = SearchSummary::default();
    let mut seen = HashSet::new();
    let batch = cfg.batch.max(1);
    let mut start = 0usize;
    while start < cfg.budget {
        let end = (start + batch).min(cfg.budget);
        let results = (start..end)
            .into_par_iter()
            .map(|i| evaluate_instance(cfg, i as u64, tol))
            .collect::<Result<Vec<_>>>()?;
        for r in results {
            summary.instances_drawn += 1;
            match r {
                InstanceResult::Skipped => summary.instances_skipped += 1,
                InstanceResult::Clean => summary.instances_tested += 1,
                InstanceResult::Candidate(c) => {
                    summary.instances_tested += 1;
                    if seen.insert(c.matrix_hash.clone()) {
                        summary.candidates += 1;
                        sink(&c)?;
                    } else {
                        summary.duplicates += 1;
                    }
                }
            }
        }
        start = end;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantChannelReport {
    pub redundant_group: usize,
    pub individual: Vec<FeasibilityVerdict>,
    pub all_individual_feasible: bool,
    pub sweep: Option<DusReport>,
    pub falsification: Option<FalsifyOutcome>,
    /// Whether the eigenvalue condition held empirically; `None` when the
    /// individual stability hypothesis fails.
    pub condition_holds: Option<bool>,
}

/// Empirical check of the case where only one group carries redundant inputs.
pub fn special_case_one_redundant_channel(
    a: &PlantMatrix,
    cfg: &PipelineConfig,
    tol: &Tolerances,
) -> Result<RedundantChannelReport> {
    let redundant: Vec<usize> = (0..a.structure().groups())
        .filter(|&g| a.structure().size(g) > 1)
        .collect();
    if redundant.len() != 1 {
        return Err(Error::Precondition(format!(
            "exactly one group must have more than one input, found {}",
            redundant.len()
        )));
    }
    let mats = full_squared_matrices(a, cfg.cap)?;
    let individual = find_individual_ds(&mats, &cfg.solver, tol)?;
    let all_feasible = individual.iter().all(FeasibilityVerdict::is_feasible);
    let mut report = RedundantChannelReport {
        redundant_group: redundant[0],
        individual,
        all_individual_feasible: all_feasible,
        sweep: None,
        falsification: None,
        condition_holds: None,
    };
    if all_feasible {
        let k = GainMatrix::ones(a.structure());
        let sweep = sweep_condition(a, &k, &cfg.sampler, cfg.cap, tol)?;
        let fals = falsify_condition(
            a,
            &k,
            cfg.falsify_budget,
            cfg.sampler.seed,
            violation_threshold(tol),
        )?;
        report.condition_holds =
            Some(sweep.worst_margin >= violation_threshold(tol) && fals.witness.is_none());
        report.sweep = Some(sweep);
        report.falsification = Some(fals);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::DEFAULT_SELECTION_CAP as CAP;
    use crate::dus::SamplerConfig;
    use crate::linalg::{is_normal, min_symmetric_eig};

    fn search_cfg(sizes: Vec<usize>, budget: usize, seed: u64) -> SearchConfig {
        let mut spec = InstanceSpec::new(sizes, EntryDistribution::Uniform, seed);
        spec.diag_shift = 0.5;
        SearchConfig {
            spec,
            budget,
            falsify_budget: 150,
            gain_samples: 4,
            cap: CAP,
            batch: 16,
        }
    }

    #[test]
    fn symmetric_instance_is_positive_definite() {
        let tol = Tolerances::default();
        let spec = InstanceSpec::new(vec![1, 1], EntryDistribution::Symmetric, 11);
        let a = random_instance(&spec, 0, CAP, &tol).unwrap();
        assert!(is_normal(a.data(), &tol).unwrap());
        assert!(min_symmetric_eig(a.data()).unwrap() > 0.0);
    }

    #[test]
    fn symmetric_distribution_makes_every_squared_matrix_symmetric() {
        let mut spec = InstanceSpec::new(vec![2, 3, 2], EntryDistribution::Symmetric, 5);
        spec.require_individual_vl = false;
        let a = random_instance(&spec, 3, CAP, &Tolerances::default()).unwrap();
        for m in full_squared_matrices(&a, CAP).unwrap() {
            let t = RealMatrix::from_dmatrix(m.as_dmatrix().transpose()).unwrap();
            assert_eq!(m, t);
        }
    }

    #[test]
    fn instances_are_deterministic() {
        let tol = Tolerances::default();
        let spec = InstanceSpec::new(vec![2, 1], EntryDistribution::ClassFShifted, 42);
        let a = random_instance(&spec, 7, CAP, &tol).unwrap();
        assert_eq!(a, random_instance(&spec, 7, CAP, &tol).unwrap());
        assert_ne!(a, random_instance(&spec, 8, CAP, &tol).unwrap());
    }

    #[test]
    fn retries_exhausted_is_reported() {
        let mut spec = InstanceSpec::new(vec![2], EntryDistribution::Uniform, 1);
        spec.diag_shift = -10.0;
        spec.max_retries = 5;
        let err = random_instance(&spec, 0, CAP, &Tolerances::default()).unwrap_err();
        assert_eq!(err, Error::RetriesExhausted { attempts: 5 });
    }

    #[test]
    fn zero_budget_search_is_empty() {
        let mut n = 0;
        let s = search_conjecture(
            &search_cfg(vec![2, 1], 0, 1),
            &Tolerances::default(),
            |_| {
                n += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(s.instances_drawn, 0);
        assert_eq!(n, 0);
    }

    #[test]
    fn square_structures_have_no_candidates() {
        let tol = Tolerances::default();
        let s = search_conjecture(&search_cfg(vec![1, 1, 1], 60, 3), &tol, |c| {
            panic!("square structure produced a candidate: {:?}", c)
        })
        .unwrap();
        assert_eq!(s.candidates, 0);
        assert!(s.instances_tested > 0);
    }

    #[test]
    fn search_is_reproducible() {
        let tol = Tolerances::default();
        let run = || {
            let mut found = Vec::new();
            let s = search_conjecture(&search_cfg(vec![2, 2], 40, 8), &tol, |c| {
                found.push(c.clone());
                Ok(())
            })
            .unwrap();
            (s, found)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tampered_candidate_fails_verification() {
        let tol = Tolerances::default();
        let a = PlantMatrix::new(
            BlockStructure::new(vec![2, 1]).unwrap(),
            RealMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let certs = individual_certificates(&a, CAP, &SolverOptions::default(), &tol)
            .unwrap()
            .unwrap();
        let witness = DusWitness {
            e: vec![vec![1.0, 1.0], vec![1.0]],
            subset: vec![0],
            spectrum: vec![(-1.0, 0.0)],
            margin: -1.0,
        };
        let c = CounterexampleCandidate {
            instance_index: 0,
            sizes: vec![2, 1],
            a: a.data().rows(),
            individual_certs: certs,
            violation_margin: -1.0,
            witness,
            gain_transfers: 0,
            matrix_hash: matrix_hash(&a),
        };
        assert!(!verify_candidate(&c, CAP, &tol));
    }

    #[test]
    fn redundant_channel_preconditions() {
        let tol = Tolerances::default();
        let cfg = PipelineConfig {
            solver: SolverOptions::default(),
            sampler: SamplerConfig::new(50, 1),
            falsify_budget: 100,
            cap: CAP,
        };
        let two_two = PlantMatrix::new(
            BlockStructure::new(vec![2, 2]).unwrap(),
            RealMatrix::zeros(2, 4),
        )
        .unwrap();
        assert!(matches!(
            special_case_one_redundant_channel(&two_two, &cfg, &tol),
            Err(Error::Precondition(_))
        ));
        let square = PlantMatrix::square(RealMatrix::identity(2)).unwrap();
        assert!(matches!(
            special_case_one_redundant_channel(&square, &cfg, &tol),
            Err(Error::Precondition(_))
        ));

        let a = PlantMatrix::new(
            BlockStructure::new(vec![2, 1]).unwrap(),
            RealMatrix::from_rows(&[vec![2.0, 1.5, 0.3], vec![0.4, -0.2, 1.0]]).unwrap(),
        )
        .unwrap();
        let r = special_case_one_redundant_channel(&a, &cfg, &tol).unwrap();
        assert_eq!(r.redundant_group, 0);
        assert!(r.all_individual_feasible);
        assert_eq!(r.condition_holds, Some(true));
    }
}
