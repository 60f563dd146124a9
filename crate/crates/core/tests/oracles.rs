use nsqstab::block::{
    assemble_aek, enumerate_full_selections, extract_squared, full_squared_matrices,
    BlockStructure, Detuning, GainMatrix, PlantMatrix, DEFAULT_SELECTION_CAP as CAP,
};
use nsqstab::dus::{check_condition_at, verify_witness, DusWitness};
use nsqstab::gamma::verify_aggregation_identity;
use nsqstab::linalg::{min_real_eig, principal_submatrix};
use nsqstab::lyapunov::{
    find_common_d, find_individual_ds, sampled_d_stability, verify_certificate,
};
use nsqstab::{RealMatrix, SolverOptions, Tolerances};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plant(rng: &mut ChaCha8Rng, sizes: Vec<usize>, shift: f64) -> PlantMatrix {
    let s = BlockStructure::new(sizes).unwrap();
    let rows: Vec<Vec<f64>> = (0..s.groups())
        .map(|r| {
            (0..s.columns())
                .map(|c| {
                    let own = s.offset(r) <= c && c < s.offset(r) + s.size(r);
                    rng.random_range(-1.0..1.0) + if own { shift } else { 0.0 }
                })
                .collect()
        })
        .collect();
    PlantMatrix::new(s, RealMatrix::from_rows(&rows).unwrap()).unwrap()
}

fn random_groups(rng: &mut ChaCha8Rng, s: &BlockStructure, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    s.sizes()
        .iter()
        .map(|&p| (0..p).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

/// `(sum_s γ_s [A]_s) D` evaluated by enumerating every squared matrix.
fn brute_force_aggregate(a: &PlantMatrix, gains: &[Vec<f64>], d: &[f64]) -> RealMatrix {
    let s = a.structure();
    let anchors: Vec<usize> = gains
        .iter()
        .map(|g| g.iter().position(|&v| v > 0.0).unwrap())
        .collect();
    let mut total = nalgebra::DMatrix::<f64>::zeros(s.groups(), s.groups());
    for sel in enumerate_full_selections(s, CAP).unwrap() {
        let gamma: f64 = sel
            .choice
            .iter()
            .enumerate()
            .map(|(i, &j)| gains[i][j] / gains[i][anchors[i]])
            .product();
        total += extract_squared(a, &sel).unwrap().as_dmatrix() * gamma;
    }
    RealMatrix::from_dmatrix(
        total * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
    )
    .unwrap()
}

#[test]
fn aggregation_identity_matches_explicit_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..60 {
        let m = 1 + trial % 4;
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
        let a = random_plant(&mut rng, sizes, 0.0);
        let s = a.structure().clone();
        let mut e = random_groups(&mut rng, &s, 0.1, 2.0);
        if trial % 3 == 0 {
            e[0][0] = 0.0;
            if e[0].len() == 1 {
                e[0][0] = 0.5;
            }
        }
        let k = random_groups(&mut rng, &s, 0.1, 2.0);
        let gains: Vec<Vec<f64>> = e
            .iter()
            .zip(&k)
            .map(|(eg, kg)| eg.iter().zip(kg).map(|(x, y)| x * y).collect())
            .collect();
        let det = Detuning::new(s.clone(), e).unwrap();
        let gain = GainMatrix::new(s.clone(), k).unwrap();
        let check = verify_aggregation_identity(&a, &det, &gain, CAP, 1e-10).unwrap();
        assert!(check.holds, "trial {trial}: residual {}", check.residual);

        let oracle = brute_force_aggregate(&a, &gains, &check.d_used);
        let aek = assemble_aek(&a, &det, &gain).unwrap();
        assert!(oracle.max_abs_diff(&aek).unwrap() <= 1e-10, "trial {trial}");
    }
}

#[test]
fn common_diagonal_implies_sampled_d_stability() {
    let tol = Tolerances::default();
    let opts = SolverOptions {
        stop_when_feasible: true,
        ..SolverOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut feasible = 0;
    for trial in 0..40 {
        let sizes: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(1..=2))
            .collect();
        let a = random_plant(&mut rng, sizes, 1.5);
        let mats = full_squared_matrices(&a, CAP).unwrap();
        let verdict = find_common_d(&mats, &opts, &tol).unwrap();
        if !verdict.is_feasible() {
            continue;
        }
        feasible += 1;
        assert!(verify_certificate(
            &mats,
            verdict.certificate.as_ref().unwrap(),
            1e-9
        ));
        for m in &mats {
            let r = sampled_d_stability(m, 30, trial, &tol).unwrap();
            assert!(r.holds, "trial {trial}: worst margin {}", r.worst_margin);
        }
    }
    assert!(feasible >= 10, "only {feasible} feasible instances");
}

#[test]
fn individual_verdicts_match_single_matrix_searches() {
    let tol = Tolerances::default();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_plant(&mut rng, vec![2, 2], 1.0);
    let mats = full_squared_matrices(&a, CAP).unwrap();
    let together = find_individual_ds(&mats, &opts, &tol).unwrap();
    for (m, v) in mats.iter().zip(&together) {
        let alone = find_common_d(std::slice::from_ref(m), &opts, &tol).unwrap();
        assert_eq!(alone, *v);
    }
}

#[test]
fn condition_margin_is_the_minimum_over_subsystems() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let a = random_plant(&mut rng, vec![2, 1, 2], 0.5);
    let s = a.structure().clone();
    let k = GainMatrix::ones(&s);
    for _ in 0..20 {
        let e = Detuning::new(s.clone(), random_groups(&mut rng, &s, 0.0, 2.0)).unwrap();
        let at = check_condition_at(&a, &k, &e).unwrap();
        let aek = assemble_aek(&a, &e, &k).unwrap();
        let full = min_real_eig(&principal_submatrix(&aek, &at.in_service).unwrap()).unwrap();
        assert!(at.margin <= full);
        let worst = at.worst().unwrap();
        let w = DusWitness {
            e: e.values().to_vec(),
            subset: worst.subset.clone(),
            spectrum: Vec::new(),
            margin: worst.margin,
        };
        assert!(verify_witness(&a, &k, &w, &Tolerances::default()));
    }
}
