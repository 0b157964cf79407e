use cicd_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut t = Tape::new();
    let av = t.constant(Tensor::matrix(4, 5, a.clone()).unwrap()).unwrap();
    let bv = t.constant(Tensor::matrix(5, 3, b.clone()).unwrap()).unwrap();
    let c = t.matmul(av, bv).unwrap();
    let want = triple_loop(&a, &b, 4, 5, 3);
    for (x, y) in t.value(c).values().iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn logits_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-30.0f64..30.0, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(x, mut m, keep)| {
                m[keep] = true;
                (x, m)
            })
    })
}

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution((x, mask) in logits_and_mask(), shift in -50.0f64..50.0) {
        let mut t = Tape::new();
        let xv = t.constant(Tensor::vector(x.clone())).unwrap();
        let y = t.masked_softmax(xv, 0, Some(&mask)).unwrap();
        let y = t.value(y).values().to_vec();
        let total: f64 = y.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (v, m) in y.iter().zip(&mask) {
            prop_assert!(*v >= 0.0);
            if !m { prop_assert_eq!(*v, 0.0); }
        }

        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let sv = t.constant(Tensor::vector(shifted)).unwrap();
        let ys = t.masked_softmax(sv, 0, Some(&mask)).unwrap();
        for (a, b) in t.value(ys).values().iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
