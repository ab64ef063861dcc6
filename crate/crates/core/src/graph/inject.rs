use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{AttrKind, AttributeBounds, Graph};

/// Attributes and edges of one injected node.
///
/// `edge_weights[j]` is the weight of the edge to `candidates[j]`;
/// candidates are ascending node ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub attributes: Vec<f64>,
    pub candidates: Vec<usize>,
    pub edge_weights: Vec<f64>,
    pub delta: usize,
    pub hardened: bool,
}

impl InjectionPlan {
    pub fn num_edges(&self) -> usize {
        self.edge_weights.iter().filter(|&&w| w != 0.0).count()
    }

    /// Ids of candidates the node connects to with nonzero weight.
    pub fn connected(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .zip(&self.edge_weights)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn edge_budget(&self) -> usize {
        self.delta.min(self.candidates.len())
    }
}

const BOUND_TOL: f64 = 1e-9;

/// Checks every plan invariant against `g` and its attribute bounds.
pub fn validate_plan(plan: &InjectionPlan, g: &Graph, bounds: &AttributeBounds) -> Result<()> {
    let fail = |msg: String| Err(Error::PlanViolation(msg));
    if plan.delta == 0 {
        return fail("edge budget must be at least 1".into());
    }
    if plan.attributes.len() != g.num_features() {
        return fail(format!(
            "{} attributes for dimension {}",
            plan.attributes.len(),
            g.num_features()
        ));
    }
    if plan.attributes.iter().any(|v| !v.is_finite()) {
        return fail("non-finite attribute".into());
    }
    if plan.candidates.len() != plan.edge_weights.len() {
        return fail("edge weights do not match candidates".into());
    }
    if plan.candidates.windows(2).any(|w| w[0] >= w[1]) {
        return fail("candidates must be strictly ascending".into());
    }
    if let Some(&c) = plan.candidates.iter().find(|&&c| c >= g.num_nodes()) {
        return fail(format!("candidate {c} is not a node"));
    }
    if plan.edge_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return fail("edge weights must be finite and nonnegative".into());
    }
    match g.attr_kind() {
        AttrKind::Continuous => {
            if !bounds.contains(&plan.attributes, BOUND_TOL) {
                return fail("attributes outside [lo, hi]".into());
            }
        }
        AttrKind::Discrete => {
            if plan.hardened {
                if plan.attributes.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return fail("hardened discrete attributes must be 0/1".into());
                }
                let ones = plan.attributes.iter().filter(|&&v| v == 1.0).count();
                let budget = bounds.l0_budget.unwrap_or(usize::MAX);
                if ones > budget {
                    return fail(format!("{ones} nonzero attributes exceed budget {budget}"));
                }
            } else if plan.attributes.iter().any(|&v| !(-BOUND_TOL..=1.0 + BOUND_TOL).contains(&v)) {
                return fail("relaxed discrete attributes outside [0, 1]".into());
            }
        }
    }
    if plan.hardened {
        if plan.edge_weights.iter().any(|&w| w != 0.0 && w != 1.0) {
            return fail("hardened edge weights must be 0/1".into());
        }
        let ones = plan.num_edges();
        if ones != plan.edge_budget() {
            return fail(format!(
                "{ones} edges, expected exactly {} (budget {})",
                plan.edge_budget(),
                plan.delta
            ));
        }
    }
    Ok(())
}

/// A base graph plus one injected node. The base is only borrowed and is
/// never modified; the injected node has id `base.num_nodes()`.
#[derive(Clone, Debug)]
pub struct PerturbedView<'g> {
    base: &'g Graph,
    plan: InjectionPlan,
}

impl<'g> PerturbedView<'g> {
    pub fn base(&self) -> &'g Graph {
        self.base
    }

    pub fn plan(&self) -> &InjectionPlan {
        &self.plan
    }

    pub fn num_nodes(&self) -> usize {
        self.base.num_nodes() + 1
    }

    pub fn injected_id(&self) -> usize {
        self.base.num_nodes()
    }

    /// Weighted degree without self-loop.
    pub fn degree(&self, v: usize) -> f64 {
        if v == self.injected_id() {
            return self.plan.edge_weights.iter().sum();
        }
        let extra = self
            .plan
            .candidates
            .binary_search(&v)
            .map_or(0.0, |j| self.plan.edge_weights[j]);
        self.base.degree(v) as f64 + extra
    }

    /// Attribute matrix with the injected row appended.
    pub fn attributes(&self) -> Tensor {
        let base = self.base.attributes();
        let mut data = Vec::with_capacity(base.len() + base.cols());
        data.extend_from_slice(base.data());
        data.extend_from_slice(&self.plan.attributes);
        Tensor::from_vec(base.rows() + 1, base.cols(), data).expect("plan dimension checked")
    }
}

/// Builds the perturbed view. Soft plans are accepted as long as their
/// shape is valid; hardened plans must respect the edge budget exactly.
pub fn inject_node(g: &Graph, plan: InjectionPlan) -> Result<PerturbedView<'_>> {
    if let Some(&c) = plan.candidates.iter().find(|&&c| c >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            id: c,
            n: g.num_nodes(),
        });
    }
    if plan.candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("candidates must be strictly ascending".into()));
    }
    if plan.attributes.len() != g.num_features() || plan.edge_weights.len() != plan.candidates.len() {
        return Err(Error::shape(
            "inject_node",
            format!(
                "{} attributes / {} weights for d={} and m={}",
                plan.attributes.len(),
                plan.edge_weights.len(),
                g.num_features(),
                plan.candidates.len()
            ),
        ));
    }
    if plan.hardened && plan.num_edges() != plan.edge_budget() {
        return Err(Error::PlanViolation(format!(
            "hardened plan has {} edges, budget {}",
            plan.num_edges(),
            plan.delta
        )));
    }
    Ok(PerturbedView { base: g, plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{attribute_bounds, normalize_adjacency};

    fn g3() -> Graph {
        Graph::new(
            &[(0, 1), (1, 2)],
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![0, 1, 0],
            2,
            AttrKind::Continuous,
        )
        .unwrap()
    }

    fn plan(weights: Vec<f64>, hardened: bool) -> InjectionPlan {
        InjectionPlan {
            attributes: vec![1.5],
            candidates: vec![1, 2],
            edge_weights: weights,
            delta: 1,
            hardened,
        }
    }

    #[test]
    fn hardened_single_edge() {
        let g = g3();
        let view = inject_node(&g, plan(vec![0.0, 1.0], true)).unwrap();
        assert_eq!(view.num_nodes(), 4);
        assert_eq!(view.degree(3), 1.0);
        assert_eq!(view.degree(2), 2.0);
        assert_eq!(view.attributes().row(3), &[1.5]);
        validate_plan(view.plan(), &g, &attribute_bounds(&g)).unwrap();
    }

    #[test]
    fn all_zero_soft_plan_leaves_node_isolated() {
        let g = g3();
        let view = inject_node(&g, plan(vec![0.0, 0.0], false)).unwrap();
        assert_eq!(view.degree(3), 0.0);
        let a = normalize_adjacency(&view).unwrap();
        assert_eq!(a.get(3, 3), 1.0);
        assert_eq!(a.get(3, 2), 0.0);
    }

    #[test]
    fn base_is_unchanged() {
        let g = g3();
        let before = g.checksum();
        let view = inject_node(&g, plan(vec![0.3, 0.7], false)).unwrap();
        let _ = normalize_adjacency(&view).unwrap();
        assert_eq!(g.checksum(), before);
    }

    #[test]
    fn rejects_bad_plans() {
        let g = g3();
        let mut p = plan(vec![1.0, 1.0], true);
        assert!(matches!(inject_node(&g, p.clone()), Err(Error::PlanViolation(_))));
        p.candidates = vec![1, 7];
        assert!(matches!(inject_node(&g, p), Err(Error::NodeOutOfRange { id: 7, .. })));

        let bounds = attribute_bounds(&g);
        let mut p = plan(vec![0.0, 1.0], true);
        p.attributes = vec![2.5];
        assert!(validate_plan(&p, &g, &bounds).is_err());
        p.attributes = vec![2.0];
        p.delta = 0;
        assert!(validate_plan(&p, &g, &bounds).is_err());
    }
}
