use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smoothfoley::autodiff::{grad_check, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Graph, ParamStore, Tensor};

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut store = ParamStore::new();
    store.insert("logits", Tensor::new(&[1, 3], vec![0.3, -1.2, 2.0]), true).unwrap();
    let ce = |g: &Graph, s: &ParamStore| {
        let lp = g.log_softmax_rows(g.param(s, "logits"));
        g.scale(g.sum(g.pick_rows(lp, &[1])), -1.0)
    };
    let r = grad_check(ce, &store, 1e-5).unwrap();
    assert_eq!(r.coordinates, 3);
    assert!(r.max_rel_error < 1e-6, "{r:?}");

    // Closed form: softmax minus one-hot.
    let g = Graph::new();
    let grads = g.backward(ce(&g, &store)).unwrap().param_grads();
    let z = [0.3f64, -1.2, 2.0];
    let den: f64 = z.iter().map(|v| v.exp()).sum();
    for (i, got) in grads["logits"].data().iter().enumerate() {
        let want = z[i].exp() / den - if i == 1 { 1.0 } else { 0.0 };
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn composite_ops_pass_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store.insert_randn("w", &[4, 3], 4, &mut rng).unwrap();
    store.insert_randn("x", &[2, 4], 1, &mut rng).unwrap();
    store.insert_randn("b", &[3], 1, &mut rng).unwrap();
    let f = |g: &Graph, s: &ParamStore| {
        let h = g.add_row_bias(g.matmul(g.param(s, "x"), g.param(s, "w")), g.param(s, "b"));
        let a = g.softmax_rows(g.gelu(h));
        let n = g.l2_normalize_rows(g.add(g.tanh(h), g.sigmoid(a)));
        g.add(g.mean(g.square(n)), g.mean(g.softplus(g.silu(h))))
    };
    let r = grad_check(f, &store, 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn adam_tracks_a_hand_evaluated_trajectory() {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::scalar(1.0), true).unwrap();
    let cfg = AdamConfig { lr: 0.1, ..Default::default() };
    let mut adam = AdamState::new(cfg);
    let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 1.0f64);
    for (t, grad) in [1.0, -0.5, 2.0].into_iter().enumerate() {
        let grads = [("p".to_string(), Tensor::scalar(grad))].into();
        adam.step(&mut store, &grads).unwrap();
        m = 0.9 * m + 0.1 * grad;
        v = 0.999 * v + 0.001 * grad * grad;
        let k = (t + 1) as i32;
        p -= 0.1 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        assert!((store.tensor("p").item() - p).abs() < 1e-12, "step {}", t + 1);
    }
    // The first step moves by about lr.
    let mut fresh = ParamStore::new();
    fresh.insert("p", Tensor::scalar(1.0), true).unwrap();
    AdamState::new(cfg).step(&mut fresh, &[("p".to_string(), Tensor::scalar(1.0))].into()).unwrap();
    assert!((fresh.tensor("p").item() - 0.9).abs() < 1e-6);
}

#[test]
fn checkpoint_restores_training_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    store.insert_randn("enc.w", &[3, 5], 3, &mut rng).unwrap();
    store.insert_randn("enc.b", &[5], 1, &mut rng).unwrap();
    store.set_trainable(|n| n.ends_with(".w"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.json");
    save_checkpoint(&store, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, store);
    assert_eq!(back.trainable_names(), vec!["enc.w".to_string()]);
    assert!(back.changed_since(&store.snapshot()).is_empty());
    assert!(dir.path().join("nested/model.bin").exists());
}
