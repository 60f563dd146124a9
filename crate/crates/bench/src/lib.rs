//! Deterministic inputs shared by the benchmarks.
use nsqstab::{BlockStructure, PlantMatrix, RealMatrix};

/// A plant with a dominant block diagonal, so its squared matrices are well conditioned.
pub fn plant(sizes: &[usize]) -> PlantMatrix {
    let s = BlockStructure::new(sizes.to_vec()).expect("sizes are positive");
    let rows: Vec<Vec<f64>> = (0..s.groups())
        .map(|r| {
            (0..s.columns())
                .map(|c| {
                    let own = s.offset(r) <= c && c < s.offset(r) + s.size(r);
                    let wobble = (((r * 31 + c * 17) % 11) as f64 - 5.0) / 10.0;
                    if own {
                        3.0 + wobble
                    } else {
                        wobble
                    }
                })
                .collect()
        })
        .collect();
    PlantMatrix::new(s, RealMatrix::from_rows(&rows).expect("finite")).expect("shapes agree")
}
