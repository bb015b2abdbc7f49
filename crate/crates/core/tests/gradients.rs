use std::time::Instant;

use proptest::prelude::*;
use vmi_core::gradcheck::{finite_diff_grad, max_rel_err, run_suite, DEFAULT_STEP, TOLERANCE};
use vmi_core::tape::Tape;
use vmi_core::tensor::Tensor;

#[test]
fn full_suite_within_tolerance() {
    let start = Instant::now();
    let results = run_suite(7).unwrap();
    for r in &results {
        println!("{:<40} cases {:>3}  max rel err {:.3e}", r.name, r.cases, r.max_rel_err);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    assert!(failed.is_empty(), "families above {TOLERANCE}: {failed:?}");
    assert!(results.len() >= 30);
    println!("suite took {:.1}s", start.elapsed().as_secs_f64());
}

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(m, n)| {
        prop::collection::vec(-3.0f64..3.0, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(8)) {
        let y = x.softmax();
        for i in 0..y.rows() {
            let row = y.row(i);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences(x in matrix(4), w_seed in 0u64..1000) {
        let mut rng = vmi_core::rng::Rng::seed_from(w_seed);
        let w1 = rng.normal_tensor(&[x.cols(), 5]);
        let w2 = rng.normal_tensor(&[5, 3]);
        let loss = |x: &Tensor| -> vmi_core::Result<(f64, Tensor)> {
            let mut t = Tape::new();
            let xv = t.var(x.clone());
            let a = t.constant(w1.clone());
            let b = t.constant(w2.clone());
            let h = t.matmul(xv, a)?;
            let h = t.tanh(h);
            let o = t.matmul(h, b)?;
            let o = t.log_softmax(o);
            let s = t.sum(o);
            let g = t.backward(s)?.get(xv).unwrap().clone();
            Ok((t.scalar(s), g))
        };
        let (_, analytic) = loss(&x).unwrap();
        let numeric = finite_diff_grad(|x| Ok(loss(x)?.0), &x, DEFAULT_STEP).unwrap();
        prop_assert!(max_rel_err(&analytic, &numeric) <= TOLERANCE);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input(x in matrix(6)) {
        let mut t = Tape::new();
        let v = t.var(x.clone());
        let sq = t.square(v);
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        prop_assert_eq!(g.get(v).unwrap(), &x.scale(2.0));
    }
}
