use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attack::AttackProblem;
use crate::autodiff::Tensor;
use crate::graph::{attribute_bounds, validate_plan, AttrKind};
use crate::models::{ModelKind, SurrogateModel, SurrogateParams};

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(edges, Tensor::zeros(n, 1), vec![0; n], 1, AttrKind::Continuous).unwrap()
}

#[test]
fn rate_examples() {
    let flags = [[true], [false], [true], [true]];
    assert_eq!(misclassification_rate(&flags).unwrap(), 0.75);
    assert_eq!(misclassification_rate(&[[false], [false]]).unwrap(), 0.0);
    let groups = [vec![true, true, false], vec![true, true, true]];
    assert_eq!(misclassification_rate(&groups).unwrap(), 0.5);
    assert!(misclassification_rate::<[bool; 1]>(&[]).is_err());
}

#[test]
fn group_budget_examples() {
    // Reddit-style: average degree 3.7, three targets, 30 candidates.
    assert_eq!(multi_target_delta(3, 3.7, 30), 11);
    assert_eq!(multi_target_delta(3, 2.0, 30), 6);
    assert_eq!(multi_target_delta(3, 10.0, 8), 4);
    assert_eq!(multi_target_delta(3, 0.1, 5), 1);
    assert_eq!(multi_target_delta(3, 4.0, 1), 1);
    assert_eq!(multi_target_delta(3, 1.5, 9), 4);
}

#[test]
fn triangle_forms_one_group() {
    let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
    assert_eq!(build_target_groups(&g, &[0, 1, 2], None).unwrap(), vec![[0, 1, 2]]);
    let iso = graph(3, &[]);
    assert!(build_target_groups(&iso, &[0, 1, 2], None).unwrap().is_empty());
}

fn valid_triple(g: &Graph, t: &[usize; 3]) -> bool {
    within_two_hops(g, t[0], t[1]) && within_two_hops(g, t[0], t[2]) && within_two_hops(g, t[1], t[2])
}

/// Largest number of disjoint valid triples, by exhaustive search.
fn max_packing(g: &Graph, pool: &[usize]) -> usize {
    fn go(g: &Graph, rest: &[usize]) -> usize {
        let Some((&u, tail)) = rest.split_first() else { return 0 };
        let mut best = go(g, tail);
        for i in 0..tail.len() {
            for j in i + 1..tail.len() {
                if valid_triple(g, &[u, tail[i], tail[j]]) {
                    let left: Vec<usize> = tail.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, &v)| v).collect();
                    best = best.max(1 + go(g, &left));
                }
            }
        }
        best
    }
    go(g, pool)
}

#[test]
fn path_of_five_packs_one_group() {
    let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    let groups = build_target_groups(&g, &[0, 1, 2, 3, 4], None).unwrap();
    assert_eq!(groups, vec![[0, 1, 2]]);
    assert_eq!(max_packing(&g, &[0, 1, 2, 3, 4]), 1);
}

#[test]
fn greedy_groups_are_valid_and_maximal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let n: usize = rng.random_range(3..10);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < 0.3 {
                    edges.push((u, v));
                }
            }
        }
        let g = graph(n, &edges);
        let pool: Vec<usize> = (0..n).collect();
        for seed in [None, Some(rng.random())] {
            let groups = build_target_groups(&g, &pool, seed).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for t in &groups {
                assert!(valid_triple(&g, t));
                assert!(t.iter().all(|v| seen.insert(*v)));
            }
            let left: Vec<usize> = pool.iter().copied().filter(|v| !seen.contains(v)).collect();
            assert_eq!(max_packing(&g, &left), 0, "greedy packing left a valid triple");
            assert!(groups.len() <= max_packing(&g, &pool));
        }
    }
}

struct Setup {
    g: Graph,
    model: SurrogateModel,
}

fn setup(degrees_first: bool) -> Setup {
    // Node 0 links 1 and 2; optionally node 1 gets two extra leaves.
    let edges: &[(usize, usize)] = if degrees_first {
        &[(0, 1), (0, 2), (1, 3), (1, 4)]
    } else {
        &[(0, 1), (0, 2)]
    };
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
    let g = Graph::new(edges, x, vec![0, 1, 0, 1, 1], 2, AttrKind::Continuous).unwrap();
    let model = SurrogateModel::new(SurrogateParams::gcn(Tensor::identity(2), Tensor::identity(2)), &g).unwrap();
    Setup { g, model }
}

#[test]
fn random_attack_contract() {
    let s = setup(true);
    let bounds = attribute_bounds(&s.g);
    let p = AttackProblem::new(&s.g, &s.model, &bounds, &[0], 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = random_attack(&p, &mut rng).unwrap();
    assert_eq!(plan.edge_weights, vec![1.0; 3]);
    validate_plan(&plan, &s.g, &bounds).unwrap();
    let p1 = AttackProblem::new(&s.g, &s.model, &bounds, &[0], 1).unwrap();
    let a = random_attack(&p1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = random_attack(&p1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!((0..5).any(|v| s.g.attributes().row(v) == a.attributes.as_slice()));
}

#[test]
fn pref_edge_follows_degree() {
    let s = setup(true);
    let bounds = attribute_bounds(&s.g);
    let p = AttackProblem::new(&s.g, &s.model, &bounds, &[2], 1).unwrap();
    // Target 2: candidates {0, 2} with degrees 2 and 1.
    assert_eq!(p.candidates(), &[0, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 10_000;
    let mut first = 0;
    for _ in 0..trials {
        if pref_edge_attack(&p, &mut rng).unwrap().edge_weights[0] == 1.0 {
            first += 1;
        }
    }
    let freq = first as f64 / trials as f64;
    assert!((freq - 2.0 / 3.0).abs() < 0.02, "{freq}");

    let all = AttackProblem::new(&s.g, &s.model, &bounds, &[2], 2).unwrap();
    assert_eq!(pref_edge_attack(&all, &mut rng).unwrap().edge_weights, vec![1.0, 1.0]);
}

#[test]
fn pref_edge_three_to_one() {
    // Candidates of target 0 in this graph: {0, 1}; degrees 1 and 3.
    let g = Graph::new(
        &[(0, 1), (1, 2), (1, 3)],
        Tensor::zeros(4, 1),
        vec![0, 1, 0, 1],
        2,
        AttrKind::Continuous,
    )
    .unwrap();
    let model = SurrogateModel::new(SurrogateParams::gcn(Tensor::filled(1, 2, 1.0), Tensor::identity(2)), &g).unwrap();
    let bounds = attribute_bounds(&g);
    let p = AttackProblem::new(&g, &model, &bounds, &[0], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut picks = [0usize; 2];
    for _ in 0..10_000 {
        let e = pref_edge_attack(&p, &mut rng).unwrap().edge_weights;
        picks[e.iter().position(|&w| w == 1.0).unwrap()] += 1;
    }
    let f = picks[1] as f64 / 10_000.0;
    assert!((f - 0.75).abs() < 0.02, "{f}");
}

#[test]
fn equal_degrees_are_uniform() {
    // Cycle: every node has degree 2; target 0 has candidates {0, 1, 5}.
    let g = Graph::new(
        &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)],
        Tensor::zeros(6, 1),
        vec![0, 1, 0, 1, 0, 1],
        2,
        AttrKind::Continuous,
    )
    .unwrap();
    let model = SurrogateModel::new(SurrogateParams::gcn(Tensor::filled(1, 2, 1.0), Tensor::identity(2)), &g).unwrap();
    let bounds = attribute_bounds(&g);
    let p = AttackProblem::new(&g, &model, &bounds, &[0], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 9_000;
    let mut counts = [0f64; 3];
    for _ in 0..trials {
        let e = pref_edge_attack(&p, &mut rng).unwrap().edge_weights;
        counts[e.iter().position(|&w| w == 1.0).unwrap()] += 1.0;
    }
    let expected = trials as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 2 degrees of freedom.
    assert!(chi2 < 13.82, "{counts:?}");
}

#[test]
fn most_attr_copies_runner_up_class() {
    let s = setup(false);
    let bounds = attribute_bounds(&s.g);
    // Only nodes 1, 3 and 4 carry label 1; target 0 is labeled 0 so k = 1.
    let p = AttackProblem::new(&s.g, &s.model, &bounds, &[0], 1).unwrap();
    assert_eq!(group_runner_up(&p), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let plan = most_attr_attack(&p, &mut rng).unwrap();
        let donor = (0..5).find(|&v| s.g.attributes().row(v) == plan.attributes.as_slice()).unwrap();
        assert_eq!(s.g.label(donor), 1);
    }
}

#[test]
fn group_runner_up_uses_mean_row() {
    let g = Graph::new(&[(0, 1), (1, 2)], Tensor::zeros(3, 3), vec![0, 0, 2], 3, AttrKind::Continuous).unwrap();
    let model = SurrogateModel::new(SurrogateParams::gcn(Tensor::identity(3), Tensor::identity(3)), &g).unwrap();
    let bounds = attribute_bounds(&g);
    let p = AttackProblem::new(&g, &model, &bounds, &[0, 1, 2], 2).unwrap();
    let mut mean = [0.0; 3];
    for t in 0..3 {
        for (m, v) in mean.iter_mut().zip(model.clean_probs().row(t)) {
            *m += v / 3.0;
        }
    }
    // Mode label is 0; the oracle picks the best other class of the mean.
    let oracle = if mean[1] >= mean[2] { 1 } else { 2 };
    assert_eq!(group_runner_up(&p), oracle);
}

#[test]
fn scenarios_validate_kinds() {
    assert!(Scenario::single_target(ModelKind::Gcn).validate().is_ok());
    assert!(Scenario::black_box(ModelKind::Gcn, ModelKind::Appnp).validate().is_ok());
    assert!(Scenario::black_box(ModelKind::Gcn, ModelKind::Gcn).validate().is_err());
    let mut s = Scenario::single_target(ModelKind::Gcn);
    s.victim = ModelKind::Appnp;
    assert!(s.validate().is_err());
}

#[test]
fn clean_rate_of_a_perfect_victim_is_zero() {
    let s = setup(true);
    let bounds = attribute_bounds(&s.g);
    let log = AccessLog::default();
    let victim = Victim::new(&s.model, &log);
    let correct: Vec<usize> = (0..5).filter(|&v| s.model.clean_prediction(v) == s.g.label(v)).collect();
    assert!(!correct.is_empty());
    let instances: Vec<Vec<usize>> = correct.iter().map(|&v| vec![v]).collect();
    let inputs = RunInputs {
        graph: &s.g,
        surrogate: &s.model,
        victim: &victim,
        log: &log,
        bounds: &bounds,
        scenario: Scenario::single_target(ModelKind::Gcn),
        instances: &instances,
        seed: 0,
        config: serde_json::Value::Null,
    };
    let (manifest, records) = run_scenario(&inputs, &mut RandomAttacker { seed: 0 }).unwrap();
    assert_eq!(manifest.clean_rate, 0.0);
    let flags: Vec<Vec<bool>> = records.iter().map(|r| r.target_success.clone()).collect();
    assert_eq!(manifest.misclassification_rate, misclassification_rate(&flags).unwrap());
    assert_eq!(manifest.victim_accesses_during_attack, 0);
    assert_eq!(log.attack_phase_accesses(VICTIM_ARTIFACT), 0);
    assert!(log.events().iter().any(|e| e.phase == Phase::Evaluate));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_records(&path, &records).unwrap();
    assert_eq!(read_records(&path).unwrap(), records);

    let report = render_report(&[manifest]);
    assert!(report.contains("| random |"));
    assert!(report.contains("single gcn"));
}
