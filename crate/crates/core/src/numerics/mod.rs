//! Dense `f64` matrices, a define-by-run gradient tape, parameter storage and
//! a finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, FD_STEP};
pub use matrix::{sigmoid, Matrix};
pub use params::{Gradients, ParamId, ParamSlot, ParamStore};
pub use tape::{Tape, Var};

use rand::Rng;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Matrix::new(rows, cols, data).expect("shape matches data length")
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(data in proptest::collection::vec(-500.0f64..500.0, 1..40), cols in 1usize..8) {
            let rows = data.len().div_ceil(cols);
            let mut d = data.clone();
            d.resize(rows * cols, 0.0);
            let s = Matrix::new(rows, cols, d).unwrap().row_softmax();
            for r in 0..rows {
                let total: f64 = s.row(r).iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(r).iter().all(|&x| x >= 0.0));
            }
        }

        #[test]
        fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * 1f64.max(x.abs()));
            }
        }
    }
}
