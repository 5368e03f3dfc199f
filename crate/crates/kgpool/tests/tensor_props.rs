//! Property tests for the numeric kernel.

use kgpool::tape::{grad_check, Tape};
use kgpool::tensor::Tensor;
use proptest::prelude::*;

fn bounded_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |data| Tensor::new(rows, cols, data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matmul_is_associative_and_has_identity(
        a in bounded_matrix(3, 4),
        b in bounded_matrix(4, 2),
        c in bounded_matrix(2, 5),
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
        let id = Tensor::identity(3);
        let same = id.matmul(&a).unwrap();
        prop_assert_eq!(same.data(), a.data());
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        row in prop::collection::vec(-30.0..30.0f64, 1..12),
        shift in -50.0..50.0f64,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&row));
        let s = tape.row_softmax(x);
        let sum: f64 = tape.value(s).data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");

        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let xs = tape.constant(Tensor::row(&shifted));
        let ss = tape.row_softmax(xs);
        for (a, b) in tape.value(s).data().iter().zip(tape.value(ss).data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences(
        x in bounded_matrix(3, 3),
        w in bounded_matrix(3, 2),
    ) {
        // a smooth composite touching matmul, tanh, softmax, and the mean
        // reduction; kinked ops (relu, max) are checked at seeded points
        // in the unit tests where ties cannot ambush the finite
        // differences
        let err = grad_check(
            |t, v| {
                let wv = t.constant(w.clone());
                let y = t.matmul(v, wv)?;
                let y = t.tanh(y);
                let s = t.row_softmax(y);
                let m = t.mean_rows(s)?;
                let sq = t.mul(m, m)?;
                Ok(t.sum_all(sq))
            },
            &x,
            1e-5,
        ).unwrap();
        prop_assert!(err < 1e-4, "gradient error {err}");
    }
}
