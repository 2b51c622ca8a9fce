mod common;

use dice_core::grad::{Activation, Mlp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_gelu_net_matches_reference_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Mlp::glorot(&[5, 16, 3], Activation::Gelu, Activation::Gelu, &mut rng).unwrap();
    let rows: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let out = net.forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
    let rows64: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let expected = common::reference_forward(&net, &rows64);
    for (i, r) in expected.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            assert!((out.row(i)[j] as f64 - v).abs() < 1e-5);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let err = common::gradient_check(1000 + seed);
        assert!(err <= 1e-3, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn forward_and_gradients_are_deterministic() {
    assert_eq!(common::gradient_check(5).to_bits(), common::gradient_check(5).to_bits());
}
