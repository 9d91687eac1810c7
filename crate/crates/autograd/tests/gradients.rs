//! Every differentiable op against central differences on random shapes.

use lobtrend_autograd::{finite_diff_check, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Weighted sum with fixed pseudo-random weights, so the scalar loss
/// exercises every output coordinate differently.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) {
    let r = finite_diff_check(f, inputs, STEP, TOL).unwrap();
    assert!(r.passed, "{r:?}");
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=8, 1usize..=8, 1usize..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn elementwise_ops((a, b, c) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c]);
        let y = random(&mut rng, &[a, b, c]);
        let bias = random(&mut rng, &[c]);
        let unit = random(&mut rng, &[b, 1]);
        check(|g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[2])?;
            let m = g.mul(d, v[0])?;
            let u = g.mul(m, v[3])?;
            let sc = g.scale(u, 0.7);
            project(g, sc, seed)
        }, &[x, y, bias, unit]);
    }

    #[test]
    fn matmul_shared_and_batched((a, b, c) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c]);
        let w = random(&mut rng, &[c, b]);
        let z = random(&mut rng, &[a, c, b]);
        check(|g, v| {
            let xw = g.matmul(v[0], v[1])?;
            let xz = g.matmul(v[0], v[2])?;
            let s = g.add(xw, xz)?;
            project(g, s, seed)
        }, &[x, w, z]);
    }

    #[test]
    fn shape_ops((a, b, c) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c]);
        let y = random(&mut rng, &[a, b, 2]);
        check(|g, v| {
            let t = g.transpose_last_two(v[0])?;
            let r = g.reshape(t, &[a * c, b])?;
            let back = g.reshape(r, &[a, c, b])?;
            let tt = g.transpose_last_two(back)?;
            let cat = g.concat_last(&[tt, v[1]])?;
            project(g, cat, seed)
        }, &[x, y]);
    }

    #[test]
    fn reductions_and_norms((a, b, c) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c + 1]);
        let gain = random(&mut rng, &[c + 1]);
        let bias = random(&mut rng, &[c + 1]);
        check(|g, v| {
            let m = g.mean_last(v[0]);
            let var = g.var_last(v[0]);
            let ln = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let lm = project(g, ln, seed)?;
            let mm = project(g, m, seed + 1)?;
            let vm = project(g, var, seed + 2)?;
            let s = g.add(lm, mm)?;
            let s = g.add(s, vm)?;
            let total = g.mean(v[0]);
            g.add(s, total)
        }, &[x, gain, bias]);
    }

    #[test]
    fn activations((a, b, c) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c]);
        check(|g, v| {
            let ge = g.gelu(v[0]);
            let sm = g.softmax_last(v[0]);
            let p1 = project(g, ge, seed)?;
            let p2 = project(g, sm, seed + 1)?;
            g.add(p1, p2)
        }, &[x]);
    }

    #[test]
    fn cross_entropy_loss(batch in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&mut rng, &[batch, 3]);
        let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
        check(|g, v| g.cross_entropy(v[0], &targets), &[logits]);
    }

    #[test]
    fn softmax_rows_sum_to_one((a, c) in (1usize..=8, 1usize..=8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[a, c]).cast::<f64>());
        let x = g.scale(x, 20.0);
        let y = g.softmax_last(x);
        for row in g.value(y).data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn fan_out_matches_closed_form() {
    // f(x) = sum(gelu(x) ⊙ x) uses x twice; df/dx = gelu'(x)·x + gelu(x).
    let xs = [-1.5, -0.2, 0.0, 0.7, 2.0];
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![5], xs.to_vec()).unwrap());
    let ge = g.gelu(x);
    let p = g.mul(ge, x).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()));
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for (&xv, &gv) in xs.iter().zip(g.grad(x).unwrap()) {
        let expected = (phi(xv) + xv * pdf(xv)) * xv + xv * phi(xv);
        assert!((gv - expected).abs() < 1e-12, "{gv} vs {expected}");
    }
}

#[test]
fn engine_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[4, 6]);
        let w = random(&mut rng, &[6, 3]);
        let mut g = Graph::new();
        let (x, w) = (g.param(x), g.param(w));
        let y = g.matmul(x, w).unwrap();
        let y = g.gelu(y);
        let l = g.cross_entropy(y, &[0, 1, 2, 1]).unwrap();
        g.backward(l).unwrap();
        (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
