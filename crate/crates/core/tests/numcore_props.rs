use hvm_core::numcore::{
    adamw_step, grad_check, read_checkpoint, write_checkpoint, Checkpoint, Graph, OptState, Tensor, TensorError, Var,
};
use hvm_core::rng::rng_from;
use proptest::prelude::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng_from(seed, &[0]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reshape_and_transpose_round_trip(r in 1usize..7, c in 1usize..7, seed in any::<u64>()) {
        let x = random(&[r, c], seed);
        prop_assert_eq!(x.reshape([r * c]).unwrap().reshape([r, c]).unwrap(), x.clone());
        prop_assert_eq!(x.transpose().unwrap().transpose().unwrap(), x);
    }

    #[test]
    fn layer_norm_rows_are_standardised(r in 1usize..6, c in 2usize..12, seed in any::<u64>()) {
        let input = random(&[r, c], seed).map(|v| 3.0 * v + 1.5);
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = g.layer_norm(x, 1e-6).unwrap();
        let out = g.value(y);
        let variance = |row: &[f64]| {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / row.len() as f64
        };
        for i in 0..r {
            // Output variance is var / (var + eps); tiny-variance rows fall short of 1.
            if variance(input.row(i)) < 0.1 {
                continue;
            }
            let row = out.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((variance(row) - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(r in 1usize..5, c in 1usize..9, seed in any::<u64>()) {
        let mut g = Graph::new();
        let x = g.constant(random(&[r, c], seed).map(|v| 20.0 * v));
        let y = g.softmax(x).unwrap();
        for i in 0..r {
            let row = g.value(y).row(i);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adamw_is_bitwise_deterministic(n in 1usize..16, seed in any::<u64>(), lr in 0.0f64..0.5, wd in 0.0f64..0.2) {
        let p = random(&[n], seed);
        let grad = random(&[n], seed ^ 1);
        let s = OptState::new(&p);
        let a = adamw_step(&p, &grad, &s, lr, 0.9, 0.999, 1e-8, wd).unwrap();
        let b = adamw_step(&p, &grad, &s, lr, 0.9, 0.999, 1e-8, wd).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1.m, b.1.m);
        prop_assert_eq!(a.1.v, b.1.v);
    }

    #[test]
    fn composite_gradients_match_finite_differences(r in 2usize..5, c in 2usize..6, seed in any::<u64>()) {
        let inputs = [random(&[r, c], seed), random(&[c, c], seed ^ 7), random(&[c], seed ^ 9)];
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var, TensorError> {
            let h = g.linear(v[0], v[1], v[2])?;
            let h = g.gelu(h)?;
            let h = g.layer_norm(h, 1e-6)?;
            let s = g.softmax(h)?;
            let w = g.constant(Tensor::from_fn([r, c], |i| (i as f64 * 0.37).sin()));
            let p = g.mul(s, w)?;
            g.sum(p)
        };
        prop_assert!(grad_check(f, &inputs, 1e-5).unwrap() <= 1e-4);
    }
}

#[test]
fn checkpoint_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut ckpt = Checkpoint::new();
    ckpt.insert("a/w", random(&[3, 5], 1));
    ckpt.insert("a/b", Tensor::scalar(-0.0));
    ckpt.insert("z", Tensor::from_fn([2, 2, 2], |i| f64::from(i as u32) * 1e-300));
    let path = dir.path().join("x.ckpt");
    write_checkpoint(&path, &ckpt).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.entries().len(), 3);
    for (name, t) in ckpt.entries() {
        let b = back.get(name).unwrap();
        assert_eq!(b.shape(), t.shape());
        let same = b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} changed");
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let mut ckpt = Checkpoint::new();
    ckpt.insert("w", random(&[4], 2));
    let bytes = ckpt.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bad).is_err());
}
