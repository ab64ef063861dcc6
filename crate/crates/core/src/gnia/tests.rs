use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attack::evaluate_plan;
use crate::graph::{attribute_bounds, validate_plan, AttributeBounds, Graph};
use crate::gumbel::gumbel_softmax_with_noise;
use crate::models::{SurrogateModel, SurrogateParams};

struct Fixture {
    g: Graph,
    model: SurrogateModel,
    bounds: AttributeBounds,
}

fn fixture(kind: AttrKind, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 14;
    let d = 4;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.25 {
                edges.push((u, v));
            }
        }
    }
    let x = match kind {
        AttrKind::Continuous => Tensor::uniform(n, d, -1.0, 1.0, &mut rng),
        AttrKind::Discrete => {
            let data = (0..n * d).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
            Tensor::from_vec(n, d, data).unwrap()
        }
    };
    let g = Graph::new(&edges, x, (0..n).map(|v| v % 2).collect(), 2, kind).unwrap();
    let params = SurrogateParams::gcn(
        Tensor::uniform(d, 5, -1.0, 1.0, &mut rng),
        Tensor::uniform(5, 2, -1.0, 1.0, &mut rng),
    );
    let model = SurrogateModel::new(params, &g).unwrap();
    let bounds = attribute_bounds(&g);
    Fixture { g, model, bounds }
}

fn generator(f: &Fixture, seed: u64) -> GniaParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GniaParams::init(4, 5, 2, 6, 7, f.g.attr_kind(), &mut rng);
    // Nonzero biases so every tensor gets exercised.
    for t in [&mut p.ba0, &mut p.ba1, &mut p.be0, &mut p.be1] {
        *t = Tensor::uniform(1, t.cols(), -0.5, 0.5, &mut rng);
    }
    p
}

fn zeroed(p: &GniaParams) -> GniaParams {
    let mut z = p.clone();
    for t in z.tensors_mut() {
        *t = Tensor::zeros(t.rows(), t.cols());
    }
    z
}

#[test]
fn zero_generator_emits_midpoint_and_degenerate_bounds() {
    let f = fixture(AttrKind::Continuous, 1);
    let mut bounds = f.bounds.clone();
    bounds.lo[2] = 0.25;
    bounds.hi[2] = 0.25;
    let problem = AttackProblem::new(&f.g, &f.model, &bounds, &[0], 1).unwrap();
    let feats = instance_features(&problem).unwrap();
    let params = zeroed(&generator(&f, 0));
    let out = gnia_forward(&params, &problem, &feats, Mode::Infer, &ForwardNoise::zeros(&problem), &Overrides::default()).unwrap();
    for i in 0..4 {
        let mid = 0.5 * (bounds.lo[i] + bounds.hi[i]);
        assert!((out.plan.attributes[i] - mid).abs() < 1e-15);
    }
    assert_eq!(out.plan.attributes[2], 0.25);

    let mut skewed = generator(&f, 3);
    skewed.ba1 = Tensor::row_vector(vec![40.0, -40.0, 3.0, 0.0]);
    let out = gnia_forward(&skewed, &problem, &feats, Mode::Infer, &ForwardNoise::zeros(&problem), &Overrides::default()).unwrap();
    assert_eq!(out.plan.attributes[2], 0.25);
}

#[test]
fn extreme_logits_harden_to_top_two() {
    let f = fixture(AttrKind::Discrete, 2);
    let mut bounds = f.bounds.clone();
    bounds.l0_budget = Some(2);
    let problem = AttackProblem::new(&f.g, &f.model, &bounds, &[0], 1).unwrap();
    let feats = instance_features(&problem).unwrap();
    let mut params = zeroed(&generator(&f, 0));
    params.tau = 0.1;
    params.ba1 = Tensor::row_vector(vec![9.0, 9.0, -9.0, -9.0]);
    let out = gnia_forward(&params, &problem, &feats, Mode::Infer, &ForwardNoise::zeros(&problem), &Overrides::default()).unwrap();
    assert_eq!(out.plan.attributes, vec![1.0, 1.0, 0.0, 0.0]);
    validate_plan(&out.plan, &f.g, &bounds).unwrap();
}

#[test]
fn single_candidate_is_always_connected() {
    // Isolated target: the candidate set is the target alone.
    let x = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
    let g = Graph::new(&[(1, 2)], x, vec![0, 1, 0], 2, AttrKind::Continuous).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = SurrogateModel::new(
        SurrogateParams::gcn(Tensor::uniform(4, 5, -1.0, 1.0, &mut rng), Tensor::uniform(5, 2, -1.0, 1.0, &mut rng)),
        &g,
    )
    .unwrap();
    let bounds = attribute_bounds(&g);
    let problem = AttackProblem::new(&g, &model, &bounds, &[0], 3).unwrap();
    assert_eq!(problem.candidates(), &[0]);
    let f = Fixture { g: g.clone(), model: model.clone(), bounds: bounds.clone() };
    let params = generator(&f, 5);
    let feats = instance_features(&problem).unwrap();
    let noise = ForwardNoise::sample(&problem, 1.0, &mut rng);
    let out = gnia_forward(&params, &problem, &feats, Mode::Train, &noise, &Overrides::default()).unwrap();
    assert!((out.plan.edge_weights[0] - 1.0).abs() < 1e-12);
}

#[test]
fn large_score_gap_selects_first() {
    let e = gumbel_softmax_with_noise(&[18.0, 0.0], 0.1, 0.0, &[0.0, 0.0]).unwrap();
    assert!(e[0] > 1.0 - 1e-12 && e[1] < 1e-12);
}

fn edge_scores(params: &GniaParams, problem: &AttackProblem<'_>, feats: &InstanceFeatures, attrs: Vec<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let overrides = Overrides {
        attributes: Some(attrs),
        edges: None,
    };
    let rec = record_generator(&mut tape, params, problem, feats, Mode::Train, &ForwardNoise::zeros(problem), &overrides).unwrap();
    tape.value(rec.scores.unwrap()).data().to_vec()
}

#[test]
fn joint_modeling_dependence() {
    let f = fixture(AttrKind::Continuous, 6);
    let problem = AttackProblem::new(&f.g, &f.model, &f.bounds, &[3], 2).unwrap();
    let feats = instance_features(&problem).unwrap();
    let mut params = generator(&f, 7);
    let a = f.g.attributes().row(0).to_vec();
    let b = f.g.attributes().row(1).to_vec();
    assert_ne!(edge_scores(&params, &problem, &feats, a.clone()), edge_scores(&params, &problem, &feats, b.clone()));
    params.ablation.no_joint = true;
    assert_eq!(edge_scores(&params, &problem, &feats, a), edge_scores(&params, &problem, &feats, b));
}

#[test]
fn infer_plans_are_valid_and_reproducible() {
    for kind in [AttrKind::Continuous, AttrKind::Discrete] {
        let f = fixture(kind, 8);
        let params = generator(&f, 9);
        for t in 0..f.g.num_nodes() {
            let problem = AttackProblem::new(&f.g, &f.model, &f.bounds, &[t], 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let a = gnia_infer(&params, &problem, &mut rng).unwrap();
            let b = gnia_infer(&params, &problem, &mut rng).unwrap();
            assert_eq!(a.plan, b.plan);
            validate_plan(&a.plan, &f.g, &f.bounds).unwrap();
            let again = evaluate_plan(&f.model, &f.g, &a.plan, &[t]).unwrap();
            assert_eq!(again.success, a.success);
            assert!((again.loss - a.loss).abs() < 1e-12);
        }
    }
}

#[test]
fn frozen_noise_gives_identical_train_losses() {
    let f = fixture(AttrKind::Discrete, 10);
    let problem = AttackProblem::new(&f.g, &f.model, &f.bounds, &[2, 5], 2).unwrap();
    let feats = instance_features(&problem).unwrap();
    let params = generator(&f, 11);
    let noise = ForwardNoise::sample(&problem, 1.0, &mut ChaCha8Rng::seed_from_u64(12));
    let a = gnia_forward(&params, &problem, &feats, Mode::Train, &noise, &Overrides::default()).unwrap();
    let b = gnia_forward(&params, &problem, &feats, Mode::Train, &noise, &Overrides::default()).unwrap();
    assert_eq!(a, b);
    let reeval = evaluate_plan(&f.model, &f.g, &a.plan, &[2, 5]).unwrap();
    assert!((reeval.loss - a.loss).abs() < 1e-12);
}

#[test]
fn generator_gradients_match_finite_differences() {
    for kind in [AttrKind::Continuous, AttrKind::Discrete] {
        let f = fixture(kind, 13);
        let problem = AttackProblem::new(&f.g, &f.model, &f.bounds, &[4], 2).unwrap();
        let feats = instance_features(&problem).unwrap();
        let params = generator(&f, 14);
        let noise = ForwardNoise::sample(&problem, 1.0, &mut ChaCha8Rng::seed_from_u64(15));
        let none = Overrides::default();
        let (_, grads) = gnia_loss_and_grad(&params, &problem, &feats, &noise, &none).unwrap();
        let h = 1e-5;
        for (ti, grad) in grads.iter().enumerate() {
            let mut fd = Vec::with_capacity(grad.len());
            for i in 0..grad.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data_mut()[i] -= h;
                let lp = gnia_loss_and_grad(&plus, &problem, &feats, &noise, &none).unwrap().0;
                let lm = gnia_loss_and_grad(&minus, &problem, &feats, &noise, &none).unwrap().0;
                fd.push((lp - lm) / (2.0 * h));
            }
            let num: f64 = fd.iter().zip(grad.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(grad.data().iter().map(|a| a * a).sum::<f64>().sqrt());
            let err = if den < 1e-10 { num } else { num / den };
            assert!(err < 1e-4, "{kind:?} tensor {ti}: {err}");
        }
    }
}

#[test]
fn checkpoint_roundtrip() {
    let f = fixture(AttrKind::Discrete, 16);
    let mut params = generator(&f, 17);
    params.tau = 0.1;
    params.ablation.no_joint = true;
    let mut buf = Vec::new();
    write_gnia(&params, &mut buf).unwrap();
    assert_eq!(read_gnia(&mut buf.as_slice()).unwrap(), params);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.ckpt");
    save_gnia(&params, &path).unwrap();
    assert_eq!(load_gnia(&path).unwrap(), params);
}

#[test]
fn training_is_deterministic_and_returns_best_epoch() {
    let f = fixture(AttrKind::Continuous, 18);
    let problems: Vec<_> = (0..14)
        .map(|t| AttackProblem::new(&f.g, &f.model, &f.bounds, &[t], 1).unwrap())
        .collect();
    let (train, val) = problems.split_at(10);
    let cfg = GniaTrainConfig {
        lr: 1e-2,
        max_epochs: 12,
        patience: 4,
        batch_size: 4,
        attr_hidden: 8,
        edge_hidden: 8,
        seed: 19,
        ..Default::default()
    };
    let (p1, r1) = gnia_train(train, val, &cfg).unwrap();
    let (p2, r2) = gnia_train(train, val, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    let max = r1.val_history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r1.best_val_rate, max);
    assert_eq!(r1.val_history[r1.best_epoch], max);
    let first_best = r1.val_history.iter().position(|&r| r == max).unwrap();
    assert_eq!(r1.best_epoch, first_best);

    assert!(gnia_train(train, &problems[..2], &cfg).is_err());
}
