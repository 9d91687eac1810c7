//! Finite-difference gradient checks for every layer and architecture.

use lobtrend_autograd::{finite_diff_check, AutogradError, Bound, GradCheckReport, Graph, ParamStore, Tensor, Var};
use lobtrend_core::features::WindowSet;
use lobtrend_core::TrendLabel;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layers::{feature_mix, spatial_attention, temporal_mix, Bin, Init, LayerNorm, Linear, MixMlp, MlpLobBlock, SelfAttention};
use crate::model::{Architecture, Model, ModelConfig};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Worst report over all instances of one component.
#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub name: String,
    pub instances: usize,
    pub worst: GradCheckReport,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.worst.passed
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Perturbs every parameter so gains, biases and mixing weights are generic.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn into_autograd(e: NnError) -> AutogradError {
    match e {
        NnError::Autograd(e) => e,
        other => AutogradError::InvalidShape { op: "forward", reason: other.to_string() },
    }
}

type LayerFn = dyn Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>;

/// Checks `sum(w * layer(x))` for a random weighting `w`, differentiating
/// with respect to the input and every parameter.
fn check_layer(store: &ParamStore<f64>, x: Tensor<f64>, out_shape: &[usize], layer: &LayerFn, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let weights = random(rng, out_shape);
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    Ok(finite_diff_check(
        |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = layer(g, &p, v[0]).map_err(into_autograd)?;
            let w = g.constant(weights.clone());
            let yw = g.mul(y, w)?;
            Ok(g.sum(yw))
        },
        &inputs,
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    )?)
}

fn worst_of(name: &str, reports: Vec<GradCheckReport>) -> ComponentCheck {
    let instances = reports.len();
    let worst = reports
        .into_iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one instance");
    ComponentCheck { name: name.to_string(), instances, worst }
}

/// Small architecture used for whole-model checks.
pub fn tiny_config(architecture: Architecture, seed: u64) -> ModelConfig {
    ModelConfig {
        window: 4,
        hidden: 8,
        blocks: 2,
        seed,
        ..ModelConfig::new(architecture, 4)
    }
}

fn check_model(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let model = Model::<f64>::new(config.clone())?;
    let mut params = model.params.clone();
    jitter(&mut params, rng);
    let model = Model::with_params(config.clone(), params)?;
    let batch = 2;
    let x = random(rng, &[batch, config.window, config.features]);
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
    let mut inputs = vec![x];
    inputs.extend(model.params.iter().map(|(_, t)| t.clone()));
    Ok(finite_diff_check(
        |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let logits = model
                .forward(g, &p, v[0], None)
                .map_err(into_autograd)?;
            g.cross_entropy(logits, &targets)
        },
        &inputs,
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    )?)
}

/// Runs `instances` random checks of each layer and each architecture.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut layer = |name: &str, rng: &mut ChaCha8Rng, build: &dyn Fn(&mut Init<'_, f64>) -> (Box<LayerFn>, Vec<usize>, Vec<usize>)| -> Result<()> {
        let mut reports = Vec::with_capacity(instances);
        for _ in 0..instances {
            let mut store = ParamStore::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let (f, in_shape, out_shape) = build(&mut Init { store: &mut store, rng: &mut init_rng });
            jitter(&mut store, rng);
            let x = random(rng, &in_shape);
            reports.push(check_layer(&store, x, &out_shape, &*f, rng)?);
        }
        out.push(worst_of(name, reports));
        Ok(())
    };

    layer("linear", &mut rng, &|init| {
        let l = Linear::new(init, "l", 5, 3, true);
        (Box::new(move |g, p, x| l.forward(g, p, x)), vec![2, 4, 5], vec![2, 4, 3])
    })?;
    layer("layer-norm", &mut rng, &|init| {
        let l = LayerNorm::new(init, "n", 6);
        (Box::new(move |g, p, x| l.forward(g, p, x)), vec![3, 6], vec![3, 6])
    })?;
    layer("feature-mix", &mut rng, &|init| {
        let m = MixMlp::new(init, "m", 4, 4);
        (Box::new(move |g, p, x| feature_mix(g, p, &m, x)), vec![3, 4], vec![3, 4])
    })?;
    layer("temporal-mix", &mut rng, &|init| {
        let m = MixMlp::new(init, "m", 3, 4);
        (Box::new(move |g, p, x| temporal_mix(g, p, &m, x)), vec![3, 4], vec![3, 4])
    })?;
    layer("mlplob-block", &mut rng, &|init| {
        let b = MlpLobBlock::new(init, "b", 3, 4, 2);
        (Box::new(move |g, p, x| b.forward(g, p, x)), vec![2, 3, 4], vec![2, 3, 4])
    })?;
    layer("bin", &mut rng, &|init| {
        let b = Bin::new(init, "bin", 4, 5);
        (Box::new(move |g, p, x| b.forward(g, p, x)), vec![2, 4, 5], vec![2, 4, 5])
    })?;
    layer("temporal-attention", &mut rng, &|init| {
        let a = SelfAttention::new(init, "a", 4);
        (Box::new(move |g, p, x| a.forward(g, p, x)), vec![2, 5, 4], vec![2, 5, 4])
    })?;
    layer("spatial-attention", &mut rng, &|init| {
        let a = SelfAttention::new(init, "a", 5);
        (Box::new(move |g, p, x| spatial_attention(g, p, &a, x)), vec![2, 5, 4], vec![2, 5, 4])
    })?;

    for arch in Architecture::ALL {
        let mut reports = Vec::with_capacity(instances);
        for _ in 0..instances {
            let config = tiny_config(arch, rng.random());
            reports.push(check_model(config, &mut rng)?);
        }
        out.push(worst_of(arch.name(), reports));
    }
    Ok(out)
}

/// `n` independent windows whose class is a rising, flat or falling ramp in
/// feature 0 on top of Gaussian noise in every feature.
///
/// The projection of feature 0 on the centred ramp is exactly `2 (c - 1)`
/// times the ramp's squared norm, so the classes are linearly separable.
pub fn separable_windows(n: usize, window: usize, features: usize, seed: u64) -> lobtrend_core::Result<WindowSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n * window * features);
    let mut labels = Vec::with_capacity(n * window);
    let ramp: Vec<f64> = (0..window).map(|t| ramp_at(t, window)).collect();
    let norm: f64 = ramp.iter().map(|r| r * r).sum::<f64>().sqrt().max(1e-12);
    for i in 0..n {
        let class = TrendLabel::ALL[i % 3];
        let sign = class.index() as f64 - 1.0;
        let noise: Vec<f64> = (0..window * features).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        }).collect();
        // Remove the noise component along the ramp so the projection is exact.
        let along: f64 = (0..window).map(|t| noise[t * features] * ramp[t]).sum::<f64>() / (norm * norm);
        for t in 0..window {
            for j in 0..features {
                let mut v = noise[t * features + j];
                if j == 0 {
                    v += 2.0 * sign * ramp[t] - along * ramp[t];
                }
                rows.push(v);
            }
            labels.push((t + 1 == window).then_some(class));
        }
    }
    WindowSet::from_rows(rows, features, window, &labels)
}

fn ramp_at(t: usize, window: usize) -> f64 {
    if window < 2 {
        return 0.0;
    }
    2.0 * t as f64 / (window - 1) as f64 - 1.0
}
