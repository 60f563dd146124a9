use nsqstab::{BlockStructure, Detuning, GainMatrix, PlantMatrix, RealMatrix};
use nsqstab_cli::{parse_matrix_str, print_matrix_file, MatrixFile};
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        (-1_000_000i64..1_000_000, 0u32..8).prop_map(|(m, e)| m as f64 / 10f64.powi(e as i32)),
    ]
}

fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        0.0..1e6f64,
        any::<f64>()
            .prop_map(f64::abs)
            .prop_filter("finite", |v| v.is_finite())
    ]
}

fn matrix_file() -> impl Strategy<Value = MatrixFile> {
    prop::collection::vec(1usize..=3, 1..=4).prop_flat_map(|sizes| {
        let m = sizes.len();
        let n: usize = sizes.iter().sum();
        (
            prop::collection::vec(entry(), m * n),
            prop::option::of(prop::collection::vec(weight(), n)),
            prop::option::of(prop::collection::vec(weight(), n)),
        )
            .prop_map(move |(a, k, e)| {
                let s = BlockStructure::new(sizes.clone()).unwrap();
                let split = |flat: Vec<f64>| {
                    let mut it = flat.into_iter();
                    sizes
                        .iter()
                        .map(|&p| it.by_ref().take(p).collect())
                        .collect::<Vec<Vec<f64>>>()
                };
                MatrixFile {
                    plant: PlantMatrix::new(
                        s.clone(),
                        RealMatrix::from_row_slice(m, n, &a).unwrap(),
                    )
                    .unwrap(),
                    gain: k.map(|k| GainMatrix::new(s.clone(), split(k)).unwrap()),
                    detuning: e.map(|e| Detuning::new(s.clone(), split(e)).unwrap()),
                }
            })
    })
}

fn bits(f: &MatrixFile) -> Vec<u64> {
    let mut out: Vec<u64> = f
        .plant
        .data()
        .rows()
        .concat()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    for block in [
        f.gain.as_ref().map(|g| g.values()),
        f.detuning.as_ref().map(|e| e.values()),
    ]
    .into_iter()
    .flatten()
    {
        out.extend(block.concat().iter().map(|v| v.to_bits()));
    }
    out
}

proptest! {
    #[test]
    fn parse_inverts_print_bit_exactly(f in matrix_file()) {
        let text = print_matrix_file(&f);
        let back = parse_matrix_str(&text).unwrap();
        prop_assert_eq!(bits(&back), bits(&f));
        prop_assert_eq!(print_matrix_file(&back), text);
    }
}
