use super::*;
use crate::graph::{attribute_bounds, validate_plan};
use crate::models::SurrogateParams;

#[test]
fn loss_examples() {
    let z = Tensor::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1]]).unwrap();
    assert!((attack_loss(&z, &[0], &[0]).unwrap() - 0.5).abs() < 1e-15);
    assert!((attack_loss(&z, &[1], &[0]).unwrap() + 0.5).abs() < 1e-15);
    assert!(attack_loss(&z, &[0, 1], &[0, 0]).unwrap().abs() < 1e-15);
    assert!(matches!(attack_loss(&z, &[0], &[3]), Err(Error::LabelOutOfRange { .. })));
}

/// Path 0-1-2-3 with identity weights: the class is the larger of the two
/// aggregated features. Node 1 leans slightly towards class 0.
fn toy() -> (Graph, SurrogateModel) {
    let x = Tensor::from_rows(&[
        vec![0.6, 0.4],
        vec![0.52, 0.48],
        vec![0.5, 0.5],
        vec![0.0, 1.0],
    ])
    .unwrap();
    let g = Graph::new(&[(0, 1), (1, 2), (2, 3)], x, vec![0, 0, 1, 1], 2, AttrKind::Continuous).unwrap();
    let m = SurrogateModel::new(SurrogateParams::gcn(Tensor::identity(2), Tensor::identity(2)), &g).unwrap();
    (g, m)
}

#[test]
fn opti_flips_a_low_margin_target() {
    let (g, m) = toy();
    let bounds = attribute_bounds(&g);
    let problem = AttackProblem::new(&g, &m, &bounds, &[0], 1).unwrap();
    let clean = evaluate_clean(&m, &g, &[0]).unwrap();
    assert!(!clean.success[0] && clean.loss < 0.05, "{clean:?}");
    let out = opti_attack(&problem, &OptiConfig { max_iters: 200, ..Default::default() }).unwrap();
    assert!(out.success[0], "{out:?}");
    validate_plan(&out.plan, &g, &bounds).unwrap();
    let again = evaluate_plan(&m, &g, &out.plan, &[0]).unwrap();
    assert_eq!(again.success, out.success);
    assert!((again.loss - out.loss).abs() < 1e-12);
}

#[test]
fn zero_budget_is_rejected() {
    let (g, m) = toy();
    let bounds = attribute_bounds(&g);
    assert!(matches!(
        AttackProblem::new(&g, &m, &bounds, &[0], 0),
        Err(Error::Precondition(_))
    ));
    assert!(AttackProblem::new(&g, &m, &bounds, &[], 1).is_err());
}

#[test]
fn misclassified_target_succeeds_at_once() {
    let (g, _) = toy();
    // Relabel node 0 so the model already gets it wrong.
    let relabeled = Graph::new(
        &g.edges().collect::<Vec<_>>(),
        g.attributes().clone(),
        vec![1, 0, 1, 1],
        2,
        AttrKind::Continuous,
    )
    .unwrap();
    let m = SurrogateModel::new(SurrogateParams::gcn(Tensor::identity(2), Tensor::identity(2)), &relabeled).unwrap();
    let bounds = attribute_bounds(&relabeled);
    assert!(evaluate_clean(&m, &relabeled, &[0]).unwrap().loss < 0.0);
    let problem = AttackProblem::new(&relabeled, &m, &bounds, &[0], 1).unwrap();
    let out = opti_attack(&problem, &OptiConfig::default()).unwrap();
    assert!(out.success[0] && out.loss < 0.0);
}

#[test]
fn best_tracking_never_worsens_the_first_hardened_loss() {
    let (g, m) = toy();
    let bounds = attribute_bounds(&g);
    let problem = AttackProblem::new(&g, &m, &bounds, &[0, 1], 2).unwrap();
    let first = OptiConfig { max_iters: 1, ..Default::default() };
    let long = OptiConfig { max_iters: 300, ..Default::default() };
    let a = opti_attack(&problem, &first).unwrap();
    let b = opti_attack(&problem, &long).unwrap();
    assert!(b.loss <= a.loss);
    validate_plan(&b.plan, &g, &bounds).unwrap();
}

#[test]
fn discrete_plans_respect_the_l0_budget() {
    let x = Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![1.0, 1.0, 0.0],
        vec![0.0, 1.0, 1.0],
        vec![0.0, 0.0, 1.0],
    ])
    .unwrap();
    let g = Graph::new(&[(0, 1), (1, 2), (2, 3)], x, vec![0, 0, 1, 1], 2, AttrKind::Discrete).unwrap();
    let w0 = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.2, 0.1], vec![-1.0, 1.0]]).unwrap();
    let m = SurrogateModel::new(SurrogateParams::gcn(w0, Tensor::identity(2)), &g).unwrap();
    let bounds = attribute_bounds(&g);
    let problem = AttackProblem::new(&g, &m, &bounds, &[1], 1).unwrap();
    let out = opti_attack(&problem, &OptiConfig { max_iters: 100, ..Default::default() }).unwrap();
    validate_plan(&out.plan, &g, &bounds).unwrap();
    let ones = out.plan.attributes.iter().filter(|&&v| v == 1.0).count();
    assert_eq!(ones, problem.attr_budget());
}
