//! Decentralized unconditional stability checks.
//!
//! The condition under test: for every nonnegative detuning `E`, every
//! nonempty set `J` of in-service groups gives a positive-stable principal
//! subsystem `[A E K]_J`. Groups whose effective gains are all zero are out of
//! service and excluded; `E = 0` is therefore vacuous rather than a violation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{
    assemble_aek, effective_gains, enumerate_full_selections, full_squared_matrices, Detuning,
    GainMatrix, PlantMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, in_class_f, is_normal, min_real_eig, nonempty_subsets, positive_stable,
    principal_submatrix, RealMatrix, Tolerances,
};
use crate::lyapunov::{find_common_d, FeasibilityVerdict};
use crate::sampling::{detuning_entry, keyed_rng};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemMargin {
    pub subset: Vec<usize>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAt {
    /// Minimum over subsystems; `+inf` when every group is out of service.
    pub margin: f64,
    pub in_service: Vec<usize>,
    pub per_subset: Vec<SubsystemMargin>,
}

impl ConditionAt {
    pub fn worst(&self) -> Option<&SubsystemMargin> {
        self.per_subset
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
    }
}

pub fn check_condition_at(a: &PlantMatrix, k: &GainMatrix, e: &Detuning) -> Result<ConditionAt> {
    let gains = effective_gains(e, k)?;
    let aek = assemble_aek(a, e, k)?;
    let in_service = gains.in_service_groups();
    if in_service.is_empty() {
        return Ok(ConditionAt {
            margin: f64::INFINITY,
            in_service,
            per_subset: Vec::new(),
        });
    }
    let per_subset = nonempty_subsets(&in_service)
        .into_iter()
        .map(|subset| {
            let margin = min_real_eig(&principal_submatrix(&aek, &subset)?)?;
            Ok(SubsystemMargin { subset, margin })
        })
        .collect::<Result<Vec<_>>>()?;
    let margin = per_subset
        .iter()
        .map(|s| s.margin)
        .fold(f64::INFINITY, f64::min);
    Ok(ConditionAt {
        margin,
        in_service,
        per_subset,
    })
}

/// Detuning distribution for sweeps and restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Probability that an entry is exactly zero.
    pub zero_prob: f64,
    pub log10_min: f64,
    pub log10_max: f64,
}

impl SamplerConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            zero_prob: 0.2,
            log10_min: -3.0,
            log10_max: 3.0,
        }
    }

    fn draw(&self, sizes: &[usize], keys: &[u64]) -> Vec<Vec<f64>> {
        let mut rng = keyed_rng(self.seed, keys);
        sizes
            .iter()
            .map(|&p| {
                (0..p)
                    .map(|_| {
                        detuning_entry(&mut rng, self.zero_prob, self.log10_min, self.log10_max)
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DusVerdict {
    #[serde(rename = "HOLDS-ON-SAMPLES")]
    HoldsOnSamples,
    #[serde(rename = "REFUTED")]
    Refuted,
}

/// The worst detuning found, with everything needed to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DusWitness {
    pub e: Vec<Vec<f64>>,
    pub subset: Vec<usize>,
    /// Eigenvalues of the subsystem as `(re, im)` pairs.
    pub spectrum: Vec<(f64, f64)>,
    pub margin: f64,
}

impl DusWitness {
    fn build(
        a: &PlantMatrix,
        k: &GainMatrix,
        e: Vec<Vec<f64>>,
        subset: Vec<usize>,
    ) -> Result<Self> {
        let det = Detuning::new(a.structure().clone(), e.clone())?;
        let aek = assemble_aek(a, &det, k)?;
        let spectrum = eigenvalues(&principal_submatrix(&aek, &subset)?)?;
        Ok(Self {
            margin: spectrum.min_real(),
            spectrum: spectrum.as_pairs(),
            e,
            subset,
        })
    }
}

/// Recomputes the witness subsystem spectrum from scratch.
pub fn verify_witness(a: &PlantMatrix, k: &GainMatrix, w: &DusWitness, tol: &Tolerances) -> bool {
    let recompute = || -> Result<f64> {
        let det = Detuning::new(a.structure().clone(), w.e.clone())?;
        let gains = effective_gains(&det, k)?;
        if w.subset
            .iter()
            .any(|&g| g >= gains.in_service.len() || !gains.in_service[g])
        {
            return Err(Error::Index(
                "witness subset contains an out-of-service group".into(),
            ));
        }
        let aek = assemble_aek(a, &det, k)?;
        min_real_eig(&principal_submatrix(&aek, &w.subset)?)
    };
    matches!(recompute(), Ok(m) if (m - w.margin).abs() <= tol.eig_tol * w.margin.abs().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DusReport {
    pub verdict: DusVerdict,
    pub worst_margin: f64,
    /// Worst case seen; `None` only if every tested detuning was fully out of service.
    pub witness: Option<DusWitness>,
    pub samples_tested: usize,
    /// The worst margin lies within `eig_tol` of zero.
    pub marginal: bool,
}

fn verdict_for(margin: f64, tol: &Tolerances) -> DusVerdict {
    if margin < -tol.eig_tol {
        DusVerdict::Refuted
    } else {
        DusVerdict::HoldsOnSamples
    }
}

/// Corner detunings first (all ones, then one-hot at every full selection),
/// then `n_samples` random detunings.
pub fn sweep_condition(
    a: &PlantMatrix,
    k: &GainMatrix,
    sampler: &SamplerConfig,
    cap: usize,
    tol: &Tolerances,
) -> Result<DusReport> {
    let s = a.structure();
    let mut cases: Vec<Vec<Vec<f64>>> = vec![Detuning::ones(s).values().to_vec()];
    for sel in enumerate_full_selections(s, cap)? {
        cases.push(Detuning::one_hot(s, &sel)?.values().to_vec());
    }
    let corners = cases.len();
    cases.extend((0..sampler.n_samples).map(|i| sampler.draw(s.sizes(), &[0x5EE9, i as u64])));

    let results = cases
        .par_iter()
        .map(|e| {
            let det = Detuning::new(s.clone(), e.clone())?;
            let at = check_condition_at(a, k, &det)?;
            Ok(at.worst().map(|w| (w.margin, w.subset.clone())))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut worst: Option<(usize, f64, Vec<usize>)> = None;
    for (idx, r) in results.into_iter().enumerate() {
        if let Some((margin, subset)) = r {
            if worst.as_ref().is_none_or(|w| margin < w.1) {
                worst = Some((idx, margin, subset));
            }
        }
    }
    let samples_tested = corners + sampler.n_samples;
    match worst {
        None => Ok(DusReport {
            verdict: DusVerdict::HoldsOnSamples,
            worst_margin: f64::INFINITY,
            witness: None,
            samples_tested,
            marginal: false,
        }),
        Some((idx, margin, subset)) => {
            let witness = DusWitness::build(a, k, cases[idx].clone(), subset)?;
            Ok(DusReport {
                verdict: verdict_for(margin, tol),
                worst_margin: margin,
                witness: Some(witness),
                samples_tested,
                marginal: margin.abs() <= tol.eig_tol,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyOutcome {
    /// Present iff a detuning with margin below the threshold was found.
    pub witness: Option<DusWitness>,
    pub best_margin: f64,
    pub evaluations: usize,
    pub restarts: usize,
}

struct Search<'a> {
    a: &'a PlantMatrix,
    k: &'a GainMatrix,
    evaluations: usize,
    budget: usize,
}

impl Search<'_> {
    fn eval(&mut self, e: &[Vec<f64>]) -> Result<Option<(f64, Vec<usize>)>> {
        self.evaluations += 1;
        let det = Detuning::new(self.a.structure().clone(), e.to_vec())?;
        let at = check_condition_at(self.a, self.k, &det)?;
        Ok(at.worst().map(|w| (w.margin, w.subset.clone())))
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }
}

fn score(r: &Option<(f64, Vec<usize>)>) -> f64 {
    r.as_ref().map_or(f64::INFINITY, |x| x.0)
}

/// Minimizes the subsystem margin over detunings: the all-ones corner, then
/// random restarts, each refined by coordinate descent on `log10 ε` within
/// `[1e-3, 1e3]` with moves to and from zero. `budget` counts margin evaluations.
pub fn falsify_condition(
    a: &PlantMatrix,
    k: &GainMatrix,
    budget: usize,
    seed: u64,
    threshold: f64,
) -> Result<FalsifyOutcome> {
    let s = a.structure();
    let sampler = SamplerConfig::new(0, seed);
    // Moves stay inside the sampled range; extreme spreads only measure rounding.
    let (lo, hi) = (10f64.powf(sampler.log10_min), 10f64.powf(sampler.log10_max));
    let mut search = Search {
        a,
        k,
        evaluations: 0,
        budget,
    };
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<usize>)> = None;
    let mut restarts = 0usize;

    'outer: while !search.exhausted() {
        let mut e = if restarts == 0 {
            Detuning::ones(s).values().to_vec()
        } else {
            sampler.draw(s.sizes(), &[0xFA15, restarts as u64])
        };
        restarts += 1;
        let mut current = search.eval(&e)?;
        let mut step = 1.0_f64;
        loop {
            if score(&current) < best.as_ref().map_or(f64::INFINITY, |b| b.0) {
                let (m, subset) = current.clone().expect("finite score");
                best = Some((m, e.clone(), subset));
            }
            if best.as_ref().is_some_and(|b| b.0 < threshold) {
                break 'outer;
            }
            if search.exhausted() || step < 1.0 / 64.0 {
                break;
            }
            let mut improved = false;
            for i in 0..s.groups() {
                for j in 0..s.size(i) {
                    let v = e[i][j];
                    let moves: Vec<f64> = if v > 0.0 {
                        [v * 10f64.powf(-step), v * 10f64.powf(step), 0.0]
                            .into_iter()
                            .filter(|&x| x == 0.0 || (lo..=hi).contains(&x))
                            .collect()
                    } else {
                        let live: Vec<f64> = e[i].iter().copied().filter(|&x| x > 0.0).collect();
                        let revive = if live.is_empty() {
                            1.0
                        } else {
                            (live.iter().map(|x| x.ln()).sum::<f64>() / live.len() as f64).exp()
                        };
                        vec![revive]
                    };
                    for candidate in moves {
                        if search.exhausted() {
                            break;
                        }
                        let mut trial = e.clone();
                        trial[i][j] = candidate;
                        let r = search.eval(&trial)?;
                        if score(&r) < score(&current) {
                            e = trial;
                            current = r;
                            improved = true;
                            break;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }

    let best_margin = best.as_ref().map_or(f64::INFINITY, |b| b.0);
    let witness = match best {
        Some((m, e, subset)) if m < threshold => Some(DusWitness::build(a, k, e, subset)?),
        _ => None,
    };
    Ok(FalsifyOutcome {
        witness,
        best_margin,
        evaluations: search.evaluations,
        restarts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverOptions,
    pub sampler: SamplerConfig,
    pub falsify_budget: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Report {
    pub squared_matrices: usize,
    pub certificate: FeasibilityVerdict,
    /// Present only when a common diagonal was certified.
    pub sweep: Option<DusReport>,
    pub falsification: Option<FalsifyOutcome>,
    /// Certified common `D` implies the sweep holds and falsification found nothing.
    pub contract_holds: Option<bool>,
}

/// Certifies a common diagonal for all full squared matrices and, when one
/// exists, tests the eigenvalue condition with the all-ones gain.
pub fn lemma4_pipeline(
    a: &PlantMatrix,
    cfg: &PipelineConfig,
    tol: &Tolerances,
) -> Result<Lemma4Report> {
    let mats = full_squared_matrices(a, cfg.cap)?;
    let certificate = find_common_d(&mats, &cfg.solver, tol)?;
    if !certificate.is_feasible() {
        return Ok(Lemma4Report {
            squared_matrices: mats.len(),
            certificate,
            sweep: None,
            falsification: None,
            contract_holds: None,
        });
    }
    let k = GainMatrix::ones(a.structure());
    let sweep = sweep_condition(a, &k, &cfg.sampler, cfg.cap, tol)?;
    let falsification =
        falsify_condition(a, &k, cfg.falsify_budget, cfg.sampler.seed, -tol.eig_tol)?;
    let contract = sweep.verdict == DusVerdict::HoldsOnSamples && falsification.witness.is_none();
    Ok(Lemma4Report {
        squared_matrices: mats.len(),
        certificate,
        sweep: Some(sweep),
        falsification: Some(falsification),
        contract_holds: Some(contract),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquaredHypotheses {
    pub choice: Vec<usize>,
    pub normal: bool,
    pub class_f: bool,
    pub positive_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub hypotheses: Vec<SquaredHypotheses>,
    pub hypotheses_hold: bool,
    pub conclusion: Option<Lemma4Report>,
}

/// Requires every full squared matrix to be normal, in class F and positive
/// stable; then runs the common-diagonal pipeline.
pub fn theorem2_check(
    a: &PlantMatrix,
    cfg: &PipelineConfig,
    tol: &Tolerances,
) -> Result<Theorem2Report> {
    let sels = enumerate_full_selections(a.structure(), cfg.cap)?;
    let hypotheses = sels
        .iter()
        .map(|sel| {
            let m = crate::block::extract_squared(a, sel)?;
            Ok(SquaredHypotheses {
                choice: sel.choice.clone(),
                normal: is_normal(&m, tol)?,
                class_f: in_class_f(&m, tol)?,
                positive_stable: positive_stable(&m, tol)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hypotheses_hold = hypotheses
        .iter()
        .all(|h| h.normal && h.class_f && h.positive_stable);
    let conclusion = if hypotheses_hold {
        Some(lemma4_pipeline(a, cfg, tol)?)
    } else {
        None
    };
    Ok(Theorem2Report {
        hypotheses,
        hypotheses_hold,
        conclusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub steps: usize,
    pub dt: f64,
    /// `(t, e(t))` at up to about a thousand evenly spaced steps, endpoints included.
    pub trajectory: Vec<(f64, Vec<f64>)>,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// `|e(T)| < 1e-2 |e(0)|`.
    pub decays: bool,
}

const BLOWUP_NORM: f64 = 1e12;
const MAX_RECORDED: usize = 1000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Classical fourth-order Runge-Kutta integration of `de/dt = -(A E K) e`.
pub fn simulate_static_loop(
    a: &PlantMatrix,
    e: &Detuning,
    k: &GainMatrix,
    x0: &[f64],
    dt: f64,
    t_final: f64,
) -> Result<Simulation> {
    if !(dt > 0.0 && t_final > dt) {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt < T, got dt = {dt}, T = {t_final}"
        )));
    }
    let aek = assemble_aek(a, e, k)?;
    if x0.len() != aek.nrows() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, loop order is {}",
            x0.len(),
            aek.nrows()
        )));
    }
    let neg = -aek.as_dmatrix();
    let rhs = |x: &nalgebra::DVector<f64>| &neg * x;
    let steps = (t_final / dt).ceil() as usize;
    let record_every = steps.div_ceil(MAX_RECORDED).max(1);
    let mut x = nalgebra::DVector::from_column_slice(x0);
    let mut trajectory = vec![(0.0, x0.to_vec())];
    for step in 1..=steps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (dt / 2.0)));
        let k3 = rhs(&(&x + &k2 * (dt / 2.0)));
        let k4 = rhs(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let n = x.norm();
        if !n.is_finite() || n > BLOWUP_NORM {
            return Err(Error::Numerical(format!(
                "state norm {n:e} exceeded {BLOWUP_NORM:e} at t = {}",
                step as f64 * dt
            )));
        }
        if step % record_every == 0 || step == steps {
            trajectory.push((step as f64 * dt, x.iter().copied().collect()));
        }
    }
    let initial_norm = norm(x0);
    let final_norm = x.norm();
    Ok(Simulation {
        steps,
        dt,
        trajectory,
        initial_norm,
        final_norm,
        decays: final_norm < initial_norm * 1e-2,
    })
}

/// Spectral radius of `A E K`, used to pick a stable explicit step.
pub fn loop_spectral_radius(aek: &RealMatrix) -> Result<f64> {
    Ok(eigenvalues(aek)?
        .eigenvalues
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}
