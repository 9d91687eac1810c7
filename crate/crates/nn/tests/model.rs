use lobtrend_autograd::{Graph, ParamStore, Tensor};
use lobtrend_nn::layers::{Init, Linear};
use lobtrend_nn::model::{build_ablation, Architecture, Model, ModelConfig};
use lobtrend_nn::train::{load_model, save_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(arch: Architecture, seed: u64) -> ModelConfig {
    ModelConfig {
        window: 6,
        hidden: 8,
        blocks: 2,
        seed,
        ..ModelConfig::new(arch, 5)
    }
}

fn random_batch<S: lobtrend_autograd::Scalar>(seed: u64, b: usize, t: usize, f: usize) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(vec![b, t, f], (0..b * t * f).map(|_| S::of(rng.random_range(-2.0..2.0))).collect()).unwrap()
}

#[test]
fn same_seed_gives_identical_parameters_and_logits() {
    for arch in Architecture::ALL {
        let a = Model::<f32>::new(small(arch, 3)).unwrap();
        let b = Model::<f32>::new(small(arch, 3)).unwrap();
        assert_eq!(a.params, b.params);
        let x = random_batch::<f32>(1, 4, 6, 5);
        let (la, lb) = (a.logits(x.clone()).unwrap(), b.logits(x).unwrap());
        assert!(la.iter().zip(&lb).all(|(p, q)| p.to_bits() == q.to_bits()));
        let c = Model::<f32>::new(small(arch, 4)).unwrap();
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn logits_have_batch_by_three_shape() {
    for arch in Architecture::ALL {
        let m = Model::<f32>::new(small(arch, 0)).unwrap();
        for b in [1, 3, 7] {
            assert_eq!(m.logits(random_batch(b as u64, b, 6, 5)).unwrap().len(), b * 3);
        }
    }
}

#[test]
fn samples_are_processed_independently() {
    for arch in Architecture::ALL {
        let m = Model::<f64>::new(small(arch, 1)).unwrap();
        let x = random_batch::<f64>(9, 4, 6, 5);
        let base = m.logits(x.clone()).unwrap();
        let win = 30;

        let mut dup = x.data().to_vec();
        dup[win..2 * win].copy_from_slice(&x.data()[..win]);
        let out = m.logits(Tensor::from_vec(vec![4, 6, 5], dup).unwrap()).unwrap();
        assert_eq!(out[0..3], out[3..6]);

        let perm = [2, 0, 3, 1];
        let px: Vec<f64> = perm.iter().flat_map(|&i| x.data()[i * win..(i + 1) * win].to_vec()).collect();
        let out = m.logits(Tensor::from_vec(vec![4, 6, 5], px).unwrap()).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..3 {
                assert!((out[r * 3 + c] - base[i * 3 + c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for arch in Architecture::ALL {
        let m = Model::<f64>::new(small(arch, 5)).unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, true);
        let x = g.constant(random_batch(2, 8, 6, 5));
        let logits = m.forward(&mut g, &p, x, None).unwrap();
        let loss = g.cross_entropy(logits, &[0, 1, 2, 0, 1, 2, 0, 1]).unwrap();
        g.backward(loss).unwrap();
        let grads = m.params.grads(&g, &p);
        for ((name, _), gr) in m.params.iter().zip(&grads) {
            let norm: f64 = gr.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "{arch}: {name} has zero gradient");
        }
    }
}

#[test]
fn parameter_counts() {
    let mut store = ParamStore::<f64>::new();
    assert_eq!(store.num_scalars(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Linear::new(&mut Init { store: &mut store, rng: &mut rng }, "l", 40, 128, true);
    assert_eq!(store.num_scalars(), 40 * 128 + 128);

    let a = Model::<f32>::new(ModelConfig::new(Architecture::Mlplob, 40)).unwrap();
    let b = Model::<f32>::new(ModelConfig::new(Architecture::Mlplob, 40)).unwrap();
    assert_eq!(a.parameter_count(), b.parameter_count());
    let from_shapes: usize = a.params.iter().map(|(_, t)| t.shape().iter().product::<usize>()).sum();
    assert_eq!(a.parameter_count(), from_shapes);
}

#[test]
fn ablations_differ_only_in_attention_width() {
    let base = ModelConfig::new(Architecture::Tlob, 40);
    let (t, n, b) = (base.window, base.hidden, base.blocks);
    let full = Model::<f32>::new(base.clone()).unwrap();
    let no_sa = Model::<f32>::new(build_ablation(Architecture::TlobNoSa, &base)).unwrap();
    let no_ta = Model::<f32>::new(build_ablation(Architecture::TlobNoTa, &base)).unwrap();
    assert_eq!(no_sa.config.attention_counts(), (8, 0));
    assert_eq!(no_ta.config.attention_counts(), (0, 8));
    assert_eq!(full.config.attention_counts(), (4, 4));
    // One attention layer of width d holds four d x d projections and a d-wide norm.
    let layer = |d: usize| 4 * d * d + 2 * d;
    assert_eq!(no_sa.parameter_count() - no_ta.parameter_count(), 2 * b * (layer(n) - layer(t)));
    assert_eq!(full.parameter_count() - no_ta.parameter_count(), b * (layer(n) - layer(t)));
}

#[test]
fn saved_models_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::<f32>::new(small(Architecture::Tlob, 8)).unwrap();
    save_model(dir.path(), "best", &m).unwrap();
    let back = load_model(dir.path(), "best").unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.config, m.config);

    let other = Model::<f32>::new(small(Architecture::Tlob, 9)).unwrap();
    std::fs::write(dir.path().join("best.config.json"), serde_json::to_string(&ModelConfig { hidden: 16, ..other.config }).unwrap()).unwrap();
    assert!(load_model(dir.path(), "best").is_err());
}
