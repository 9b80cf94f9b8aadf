use netmae_autograd::{wsd_lr, AdamWConfig, Graph, LrSchedule, OptimizerState, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        vals in proptest::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let n = vals.len().div_ceil(rows).max(1);
        let mut data = vals.clone();
        data.resize(rows * n, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[rows, n], data).unwrap()).unwrap();
        let y = g.softmax_rows(x).unwrap();
        for i in 0..rows {
            let row = g.value(y).row(i);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wsd_is_nonnegative_and_continuous(
        total in 3usize..400,
        w in 0.0f64..0.5,
        s in 0.0f64..0.5,
        peak in 1e-5f64..1.0,
    ) {
        let d = 1.0 - w - s;
        let sched = LrSchedule::new(peak, total).with_fractions(w, s, d);
        let (ws, ss, ds) = sched.spans();
        prop_assert_eq!(ws + ss + ds, total);
        for step in 0..total {
            prop_assert!(wsd_lr(&sched, step).unwrap() >= 0.0);
        }
        // Each segment's own formula agrees with its neighbour's at the shared boundary.
        if ws > 0 {
            let ramp_end = peak * ws as f64 / ws as f64;
            prop_assert!((ramp_end - peak).abs() < 1e-12);
        }
        if ds > 0 {
            let decay_start = peak * (total - (ws + ss)) as f64 / ds as f64;
            prop_assert!((decay_start - peak).abs() < 1e-12);
        }
        // Successive differences are constant within each linear piece.
        let lrs: Vec<f64> = (0..total).map(|k| wsd_lr(&sched, k).unwrap()).collect();
        for k in 1..ws {
            prop_assert!(((lrs[k] - lrs[k - 1]) - peak / ws as f64).abs() < 1e-12);
        }
        for k in (ws + ss + 1)..total {
            prop_assert!(((lrs[k - 1] - lrs[k]) - peak / ds as f64).abs() < 1e-12);
        }
    }
}

fn run_steps(seed: u64, k: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Tensor> = (0..3)
        .map(|i| {
            let n = 4 + i;
            Tensor::new(&[n], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    let names = (0..3).map(|i| format!("p{i}")).collect();
    let mut opt = OptimizerState::new(AdamWConfig::default(), names, &params);
    let sched = LrSchedule::new(1e-2, k);
    for step in 0..k {
        let grads: Vec<Tensor> = params
            .iter()
            .map(|p| {
                let data = p.data().iter().map(|x| 2.0 * x + rng.gen_range(-0.1..0.1)).collect();
                Tensor::new(p.shape(), data).unwrap()
            })
            .collect();
        opt.step(&mut params, &grads, sched.lr(step).unwrap()).unwrap();
    }
    params
}

#[test]
fn optimizer_and_schedule_are_bitwise_deterministic() {
    let a = run_steps(7, 50);
    let b = run_steps(7, 50);
    assert_eq!(a, b);
    assert_ne!(a, run_steps(8, 50));
}
