use diffinject_core::gradcheck::{check, suite};
use diffinject_core::{Graph, Result, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_kernel_and_the_decoder_path_match_finite_differences() {
    let checks = suite(11, 4, H).unwrap();
    assert!(checks.len() >= 100, "only {} checks", checks.len());
    let worst = checks.iter().map(|(_, c)| c.rel_err()).fold(0.0, f64::max);
    for (name, c) in &checks {
        assert!(c.rel_err() < TOL, "{name}: {c:?}");
    }
    assert!(worst < TOL);
    for prefix in ["decoder->enc.0.down", "decoder->enc.0.up", "decoder->enc.1.blocks.0.wq"] {
        assert!(checks.iter().any(|(n, _)| n == prefix), "{prefix} not checked");
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true)
}

fn readout(g: &Graph<f64>, y: Var<f64>) -> Result<Var<f64>> {
    let w = Tensor::from_fn(y.shape(), |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0);
    Ok(g.sum(&g.mul(&y, &g.constant(&w))?))
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn matmul_rms_softmax_composite(
        (m, k, n, a, b, w, c) in (1usize..4, 1usize..5, 2usize..5).prop_flat_map(|(m, k, n)| {
            (Just(m), Just(k), Just(n), values(m * k), values(k * n), values(n), values(n * 3))
        })
    ) {
        let mut state = vec![
            tensor(&[m, k], a),
            tensor(&[k, n], b),
            tensor(&[n], w),
            tensor(&[n, 3], c),
        ];
        let loss = |g: &Graph<f64>, s: &Vec<Tensor<f64>>| {
            let v: Vec<Var<f64>> = s.iter().map(|t| g.param(t)).collect();
            let h = g.rms_norm(&g.matmul(&v[0], &v[1])?, &v[2])?;
            readout(g, g.matmul(&g.softmax(&h)?, &v[3])?)
        };
        for p in 0..4 {
            let idx: Vec<usize> = (0..state[p].numel()).collect();
            for c in check(&mut state, loss, |s| &mut s[p], &idx, H).unwrap() {
                prop_assert!(c.rel_err() < TOL, "param {p}: {c:?}");
            }
        }
    }

    #[test]
    fn attention_with_rotary(
        (t, q, k, v) in (1usize..6).prop_flat_map(|t| (Just(t), values(t * 8), values(t * 8), values(t * 8)))
    ) {
        let mut state = vec![tensor(&[t, 8], q), tensor(&[t, 8], k), tensor(&[t, 8], v)];
        let loss = |g: &Graph<f64>, s: &Vec<Tensor<f64>>| {
            let q = g.rope(&g.param(&s[0]), 2, 10000.0, 0)?;
            let k = g.rope(&g.param(&s[1]), 2, 10000.0, 0)?;
            readout(g, g.attention(&q, &k, &g.param(&s[2]), 2, true)?)
        };
        for p in 0..3 {
            let idx: Vec<usize> = (0..state[p].numel()).step_by(3).collect();
            for c in check(&mut state, loss, |s| &mut s[p], &idx, H).unwrap() {
                prop_assert!(c.rel_err() < TOL, "param {p}: {c:?}");
            }
        }
    }

    #[test]
    fn gated_mlp_into_cross_entropy(
        (t, gate, up, targets) in (1usize..5).prop_flat_map(|t| {
            (Just(t), values(t * 6), values(t * 6), proptest::collection::vec(0u32..6, t))
        })
    ) {
        let mut state = vec![tensor(&[t, 6], gate), tensor(&[t, 6], up)];
        let mut mask = vec![true; t];
        if t > 1 {
            mask[0] = false;
        }
        let loss = |g: &Graph<f64>, s: &Vec<Tensor<f64>>| {
            let y = g.swiglu(&g.param(&s[0]), &g.param(&s[1]))?;
            g.masked_cross_entropy(&y, &targets, &mask)
        };
        for p in 0..2 {
            let idx: Vec<usize> = (0..state[p].numel()).collect();
            for c in check(&mut state, loss, |s| &mut s[p], &idx, H).unwrap() {
                prop_assert!(c.rel_err() < TOL, "param {p}: {c:?}");
            }
        }
    }
}
