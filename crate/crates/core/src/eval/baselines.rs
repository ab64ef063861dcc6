//! Heuristic attackers: random attributes and edges, attributes of the
//! runner-up class, and degree-preferential edges.

use std::time::Instant;

use rand::seq::index::{sample, sample_weighted};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{AttackOutcome, AttackProblem};
use crate::autodiff::best_other_class;
use crate::error::{Error, Result};
use crate::eval::harness::Attacker;
use crate::graph::{AttrKind, Graph, InjectionPlan};

/// Nodes whose attributes are a valid hardened injection for `g`.
fn attribute_donors(g: &Graph, l0: Option<usize>, among: impl Iterator<Item = usize>) -> Vec<usize> {
    among
        .filter(|&v| match (g.attr_kind(), l0) {
            (AttrKind::Discrete, Some(b)) => g.attributes().row(v).iter().filter(|&&x| x != 0.0).count() <= b,
            _ => true,
        })
        .collect()
}

fn copy_attributes<R: Rng + ?Sized>(problem: &AttackProblem<'_>, donors: &[usize], rng: &mut R) -> Result<Vec<f64>> {
    let v = *donors
        .get(rng.random_range(0..donors.len().max(1)))
        .ok_or_else(|| Error::Precondition("no node can donate attributes".into()))?;
    Ok(problem.graph.attributes().row(v).to_vec())
}

fn uniform_edges<R: Rng + ?Sized>(problem: &AttackProblem<'_>, rng: &mut R) -> Vec<f64> {
    let m = problem.candidates().len();
    let mut e = vec![0.0; m];
    for j in sample(rng, m, problem.edge_budget()) {
        e[j] = 1.0;
    }
    e
}

/// Attributes of a uniformly drawn node and `min(delta, m)` uniformly drawn
/// candidates. On discrete graphs only nodes within the nonzero budget are
/// eligible donors.
pub fn random_attack<R: Rng + ?Sized>(problem: &AttackProblem<'_>, rng: &mut R) -> Result<InjectionPlan> {
    let g = problem.graph;
    let donors = attribute_donors(g, problem.bounds.l0_budget, 0..g.num_nodes());
    let attributes = copy_attributes(problem, &donors, rng)?;
    let edges = uniform_edges(problem, rng);
    Ok(problem.plan(attributes, edges, true))
}

/// Runner-up class for an instance. A single target uses the surrogate's
/// clean prediction row; a group uses the mean row and excludes the most
/// common label among its targets (ties to the smaller label).
pub fn group_runner_up(problem: &AttackProblem<'_>) -> usize {
    let model = problem.model;
    let k = model.classes();
    let mut mean = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&t, &y) in problem.targets().iter().zip(problem.labels()) {
        for (m, p) in mean.iter_mut().zip(model.clean_probs().row(t)) {
            *m += p;
        }
        counts[y] += 1;
    }
    let mut mode = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[mode] {
            mode = c;
        }
    }
    best_other_class(&mean, mode)
}

/// Attributes copied from a random node labeled with the runner-up class;
/// edges as in [`random_attack`]. Falls back to [`random_attack`] when no
/// eligible node has that label.
pub fn most_attr_attack<R: Rng + ?Sized>(problem: &AttackProblem<'_>, rng: &mut R) -> Result<InjectionPlan> {
    let g = problem.graph;
    let k = group_runner_up(problem);
    let donors = attribute_donors(g, problem.bounds.l0_budget, (0..g.num_nodes()).filter(|&v| g.label(v) == k));
    if donors.is_empty() {
        log::warn!("no donor labeled {k}; falling back to random attributes");
        return random_attack(problem, rng);
    }
    let attributes = copy_attributes(problem, &donors, rng)?;
    let edges = uniform_edges(problem, rng);
    Ok(problem.plan(attributes, edges, true))
}

/// Random attributes; candidates drawn without replacement with
/// probability proportional to degree (isolated nodes weigh 1).
pub fn pref_edge_attack<R: Rng + ?Sized>(problem: &AttackProblem<'_>, rng: &mut R) -> Result<InjectionPlan> {
    let g = problem.graph;
    let donors = attribute_donors(g, problem.bounds.l0_budget, 0..g.num_nodes());
    let attributes = copy_attributes(problem, &donors, rng)?;
    let cands = problem.candidates();
    let picked = sample_weighted(
        rng,
        cands.len(),
        |j| g.degree(cands[j]).max(1) as f64,
        problem.edge_budget(),
    )
    .map_err(|e| Error::Precondition(format!("weighted sampling failed: {e}")))?;
    let mut e = vec![0.0; cands.len()];
    for j in picked {
        e[j] = 1.0;
    }
    Ok(problem.plan(attributes, e, true))
}

fn finish(problem: &AttackProblem<'_>, plan: InjectionPlan, start: Instant) -> Result<AttackOutcome> {
    let wall_time = start.elapsed().as_secs_f64();
    let eval = problem.evaluate(&plan)?;
    Ok(AttackOutcome {
        plan,
        loss: eval.loss,
        success: eval.success,
        wall_time,
        iterations: 0,
    })
}

macro_rules! baseline_attacker {
    ($name:ident, $label:literal, $f:ident) => {
        /// Seeded wrapper; instance `i` draws from its own stream.
        #[derive(Clone, Debug)]
        pub struct $name {
            pub seed: u64,
        }

        impl Attacker for $name {
            fn name(&self) -> &str {
                $label
            }

            fn attack(&mut self, index: usize, problem: &AttackProblem<'_>) -> Result<AttackOutcome> {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(index as u64);
                let start = Instant::now();
                let plan = $f(problem, &mut rng)?;
                finish(problem, plan, start)
            }
        }
    };
}

baseline_attacker!(RandomAttacker, "random", random_attack);
baseline_attacker!(MostAttrAttacker, "mostattr", most_attr_attack);
baseline_attacker!(PrefEdgeAttacker, "prefedge", pref_edge_attack);
