//! Every differentiable op against central differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values at least 0.05 away from zero, so ReLU kinks stay outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// A fixed random projection to a scalar, so every output coordinate
/// carries a distinct upstream gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37);
    let w = random(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(inputs: Vec<Tensor>, seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let r = check_gradients(
        |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        },
        &inputs,
        EPS,
        None,
    )
    .unwrap();
    r.max_rel_error
}

/// `(name, check)` for every op on instance `seed`.
fn cases(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut r;
    let mut out = Vec::new();
    let a = random(rng, &[2, 3]);
    let b = random(rng, &[2, 3]);
    out.push(("add", check(vec![a.clone(), b.clone()], seed, |g, v| g.add(v[0], v[1]))));
    out.push(("mul", check(vec![a.clone(), b.clone()], seed, |g, v| g.mul(v[0], v[1]))));
    out.push(("scale", check(vec![a.clone()], seed, |g, v| Ok(g.scale(v[0], -2.5)))));
    out.push(("sum", check(vec![a.clone()], seed, |g, v| Ok(g.sum(v[0])))));
    out.push(("mean", check(vec![a.clone()], seed, |g, v| Ok(g.mean(v[0])))));
    out.push((
        "weighted_sum",
        check(vec![Tensor::scalar(0.3), Tensor::scalar(-0.7)], seed, |g, v| {
            g.weighted_sum(&[(v[0], 1.5), (v[1], 4.0)])
        }),
    ));
    out.push((
        "relu",
        check(vec![away_from_zero(rng, &[3, 4])], seed, |g, v| Ok(g.relu(v[0]))),
    ));
    out.push((
        "sigmoid",
        check(vec![random(rng, &[3, 4])], seed, |g, v| Ok(g.sigmoid(v[0]))),
    ));
    out.push((
        "reshape",
        check(vec![random(rng, &[2, 6])], seed, |g, v| g.reshape(v[0], &[3, 4])),
    ));
    out.push((
        "flatten",
        check(vec![random(rng, &[2, 2, 3, 2])], seed, |g, v| g.flatten(v[0])),
    ));
    // reversal is not a true derivative; at scale -1 it must agree with one
    out.push((
        "gradient_reversal",
        check(vec![random(rng, &[2, 3])], seed, |g, v| {
            Ok(g.gradient_reversal(v[0], -1.0))
        }),
    ));
    for (stride, padding, k) in [(1, Padding::Same, 3), (2, Padding::Same, 5), (2, Padding::Valid, 3)] {
        let x = random(rng, &[2, 7, 6, 2]);
        let w = random(rng, &[k, k, 2, 3]);
        let bias = random(rng, &[3]);
        out.push((
            "conv2d",
            check(vec![x, w, bias], seed, move |g, v| {
                g.conv2d(v[0], v[1], v[2], stride, padding)
            }),
        ));
    }
    out.push((
        "dense",
        check(
            vec![random(rng, &[3, 4]), random(rng, &[4, 2]), random(rng, &[2])],
            seed,
            |g, v| g.dense(v[0], v[1], v[2]),
        ),
    ));
    out.push((
        "instance_norm",
        check(vec![random(rng, &[2, 3, 3, 2])], seed, |g, v| {
            g.normalize(v[0], NormMode::Instance, 1e-5)
        }),
    ));
    out.push((
        "layer_norm",
        check(vec![random(rng, &[3, 5])], seed, |g, v| {
            g.normalize(v[0], NormMode::Layer, 1e-5)
        }),
    ));
    out.push((
        "concat_channels",
        check(
            vec![random(rng, &[2, 2, 2, 1]), random(rng, &[2, 2, 2, 3])],
            seed,
            |g, v| g.concat_channels(v[0], v[1]),
        ),
    ));
    out.push((
        "tile",
        check(vec![random(rng, &[2, 3])], seed, |g, v| g.tile(v[0], 2, 3)),
    ));
    out.push((
        "repeat_batch",
        check(vec![random(rng, &[1, 2, 2, 2])], seed, |g, v| g.repeat_batch(v[0], 3)),
    ));
    out.push((
        "slice_batch",
        check(vec![random(rng, &[4, 3])], seed, |g, v| g.slice_batch(v[0], 1, 2)),
    ));
    out.push((
        "concat_batch",
        check(vec![random(rng, &[1, 3]), random(rng, &[2, 3])], seed, |g, v| {
            g.concat_batch(&[v[0], v[1]])
        }),
    ));
    let p = Tensor::from_fn(&[4, 1], |_| rng.gen_range(0.05..0.95));
    let labels = Tensor::from_fn(&[4, 1], |i| (i % 2) as f64);
    out.push((
        "binary_cross_entropy",
        check(vec![p], seed, move |g, v| g.binary_cross_entropy(v[0], &labels)),
    ));
    out
}

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..20 {
        for (name, err) in cases(seed) {
            assert!(err < TOL, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn a_wrong_backward_is_detected() {
    // d/dx of x·x treated as a constant product would be x, not 2x
    let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let err = finite_difference_check(
        |g, v| {
            let c = g.constant(g.value(v).clone());
            let y = g.mul(v, c)?;
            Ok(g.sum(y))
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reversal_is_identity_forward_and_negated_backward(
        n in 1usize..4, c in 1usize..6, scale in 0.0f64..8.0, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, c]);
        let up = random(&mut rng, &[n, c]);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let r = g.gradient_reversal(xv, scale);
        prop_assert_eq!(g.value(r), &x);
        let u = g.constant(up.clone());
        let p = g.mul(r, u).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        let expected: Vec<f64> = up.values().iter().map(|v| -scale * v).collect();
        prop_assert_eq!(g.grad(xv).unwrap().values(), expected.as_slice());
    }

    #[test]
    fn conv_gradients_hold_for_random_geometry(
        h in 3usize..8, w in 3usize..8, cin in 1usize..3, cout in 1usize..3,
        stride in 1usize..3, k in 1usize..4, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[1, h, w, cin]), random(&mut rng, &[k, k, cin, cout]), random(&mut rng, &[cout])];
        let err = check(inputs, seed, |g, v| g.conv2d(v[0], v[1], v[2], stride, Padding::Same));
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn norm_outputs_do_not_depend_on_mode(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4, 4, 2]);
        for mode in [NormMode::Instance, NormMode::Layer] {
            let run = |m: Mode| {
                let mut g = Graph::with_mode(m);
                let v = g.constant(x.clone());
                let y = g.normalize(v, mode, 1e-5).unwrap();
                g.value(y).clone()
            };
            prop_assert_eq!(run(Mode::Train), run(Mode::Eval));
        }
    }
}
