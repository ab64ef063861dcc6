//! The attack objective, hardened-plan evaluation and the per-instance
//! optimization attacker (OPTI).

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{best_other_class, RmsProp, RmsPropConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{
    candidate_set, inject_node, AdjacencyPattern, AttrKind, AttributeBounds, Graph, InjectionPlan,
};
use crate::gumbel::{gumbel_topk_on_tape, harden, GumbelConfig, TopKNoise};
use crate::models::{argmax, SurrogateModel};

/// Sum over targets of `Z[t, y_t] - max_{k != y_t} Z[t, k]`.
pub fn attack_loss(probs: &Tensor, targets: &[usize], labels: &[usize]) -> Result<f64> {
    if targets.len() != labels.len() {
        return Err(Error::shape("attack_loss", format!("{} targets, {} labels", targets.len(), labels.len())));
    }
    let mut total = 0.0;
    for (&t, &y) in targets.iter().zip(labels) {
        if t >= probs.rows() {
            return Err(Error::NodeOutOfRange { id: t, n: probs.rows() });
        }
        if y >= probs.cols() {
            return Err(Error::LabelOutOfRange { label: y, classes: probs.cols() });
        }
        let row = probs.row(t);
        total += row[y] - row[best_other_class(row, y)];
    }
    Ok(total)
}

/// Loss and per-target misclassification flags of a plan under a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub success: Vec<bool>,
}

impl Evaluation {
    pub fn all_success(&self) -> bool {
        self.success.iter().all(|&s| s)
    }
}

fn evaluation_from_probs(probs: &Tensor, targets: &[usize], labels: &[usize]) -> Result<Evaluation> {
    let loss = attack_loss(probs, targets, labels)?;
    let success = targets
        .iter()
        .zip(labels)
        .map(|(&t, &y)| argmax(probs.row(t)) != y)
        .collect();
    Ok(Evaluation { loss, success })
}

/// Re-evaluates a plan from scratch: builds the perturbed view and runs
/// the model's forward pass on it.
pub fn evaluate_plan(model: &SurrogateModel, g: &Graph, plan: &InjectionPlan, targets: &[usize]) -> Result<Evaluation> {
    model.check_graph(g)?;
    let labels: Vec<usize> = targets.iter().map(|&t| g.label(t)).collect();
    let view = inject_node(g, plan.clone())?;
    evaluation_from_probs(&model.predict(&view)?, targets, &labels)
}

/// Clean-graph flags: whether each target is already misclassified.
pub fn evaluate_clean(model: &SurrogateModel, g: &Graph, targets: &[usize]) -> Result<Evaluation> {
    model.check_graph(g)?;
    let labels: Vec<usize> = targets.iter().map(|&t| g.label(t)).collect();
    evaluation_from_probs(model.clean_probs(), targets, &labels)
}

/// One attack instance: a target node or group, the surrogate, the budget
/// and the bounds, plus the injection pattern over the candidate set.
#[derive(Clone, Debug)]
pub struct AttackProblem<'a> {
    pub graph: &'a Graph,
    pub model: &'a SurrogateModel,
    pub bounds: &'a AttributeBounds,
    pub delta: usize,
    targets: Vec<usize>,
    labels: Vec<usize>,
    candidates: Vec<usize>,
    pattern: Arc<AdjacencyPattern>,
}

impl<'a> AttackProblem<'a> {
    pub fn new(
        graph: &'a Graph,
        model: &'a SurrogateModel,
        bounds: &'a AttributeBounds,
        targets: &[usize],
        delta: usize,
    ) -> Result<Self> {
        if delta == 0 {
            return Err(Error::Precondition("edge budget must be at least 1".into()));
        }
        if targets.is_empty() {
            return Err(Error::Precondition("no target nodes".into()));
        }
        model.check_graph(graph)?;
        if bounds.dim() != graph.num_features() {
            return Err(Error::shape("attack", format!("bounds of dim {} for d={}", bounds.dim(), graph.num_features())));
        }
        let candidates = candidate_set(graph, targets)?;
        let pattern = Arc::new(AdjacencyPattern::with_injection(graph, &candidates)?);
        Ok(AttackProblem {
            graph,
            model,
            bounds,
            delta,
            targets: targets.to_vec(),
            labels: targets.iter().map(|&t| graph.label(t)).collect(),
            candidates,
            pattern,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn pattern(&self) -> &Arc<AdjacencyPattern> {
        &self.pattern
    }

    pub fn edge_budget(&self) -> usize {
        self.delta.min(self.candidates.len())
    }

    /// Number of ones in a hardened discrete attribute vector.
    pub fn attr_budget(&self) -> usize {
        self.bounds
            .l0_budget
            .unwrap_or(1)
            .clamp(1, self.graph.num_features().max(1))
    }

    pub fn is_discrete(&self) -> bool {
        self.graph.attr_kind() == AttrKind::Discrete
    }

    /// Margin loss of soft or hard attribute/edge rows already on `tape`.
    pub fn record_loss(&self, tape: &mut Tape, attributes: Var, edges: Var) -> Result<Var> {
        let probs = self.model.forward_injected(tape, &self.pattern, attributes, edges)?;
        tape.margin(probs, &self.targets, &self.labels)
    }

    /// Maps free logits to bounded continuous attributes,
    /// `lo + sigmoid(x) * (hi - lo)`.
    pub fn record_continuous_attributes(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        let s = tape.sigmoid(logits);
        let span: Vec<f64> = self.bounds.hi.iter().zip(&self.bounds.lo).map(|(h, l)| h - l).collect();
        let stretched = tape.mul_const(s, Tensor::row_vector(span))?;
        tape.add_const(stretched, &Tensor::row_vector(self.bounds.lo.clone()))
    }

    pub fn plan(&self, attributes: Vec<f64>, edge_weights: Vec<f64>, hardened: bool) -> InjectionPlan {
        InjectionPlan {
            attributes,
            candidates: self.candidates.clone(),
            edge_weights,
            delta: self.delta,
            hardened,
        }
    }

    /// Projects relaxed attributes and edges to a hardened plan.
    pub fn harden_plan(&self, attributes: &[f64], edges: &[f64]) -> InjectionPlan {
        let attributes = if self.is_discrete() {
            harden(attributes, self.attr_budget())
        } else {
            attributes
                .iter()
                .zip(self.bounds.lo.iter().zip(&self.bounds.hi))
                .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
                .collect()
        };
        self.plan(attributes, harden(edges, self.edge_budget()), true)
    }

    /// Evaluates a plan with the problem's surrogate, reusing the cached
    /// injection pattern.
    pub fn evaluate(&self, plan: &InjectionPlan) -> Result<Evaluation> {
        if plan.candidates != self.candidates {
            return evaluate_plan(self.model, self.graph, plan, &self.targets);
        }
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row_vector(plan.attributes.clone()));
        let e = tape.constant(Tensor::row_vector(plan.edge_weights.clone()));
        let probs = self.model.forward_injected(&mut tape, &self.pattern, a, e)?;
        evaluation_from_probs(tape.value(probs), &self.targets, &self.labels)
    }
}

/// Hardened result of any attacker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub plan: InjectionPlan,
    pub loss: f64,
    pub success: Vec<bool>,
    /// Seconds spent inside the attack call.
    pub wall_time: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptiConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// Iterations without improvement of the best hardened loss before
    /// stopping.
    pub patience: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Temperature, initial exploration and per-iteration decay of the
    /// relaxations. `k` and `seed` are ignored; budgets come from the
    /// problem and the seed from `seed` below.
    pub gumbel: GumbelConfig,
    pub seed: u64,
}

impl Default for OptiConfig {
    fn default() -> Self {
        OptiConfig {
            lr: 1e-2,
            max_iters: 1000,
            patience: 50,
            tol: 1e-6,
            restarts: 1,
            gumbel: GumbelConfig::default(),
            seed: 0,
        }
    }
}

impl OptiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::Config("OPTI needs lr > 0, max_iters >= 1 and restarts >= 1".into()));
        }
        GumbelConfig { k: 1, ..self.gumbel }.validate()
    }
}

/// Directly optimizes one injected node for one problem instance.
///
/// The free variables are attribute logits and candidate edge scores,
/// both initialized to zero. Every iteration hardens the current relaxed
/// plan and keeps the best hardened plan seen across iterations and
/// restarts.
pub fn opti_attack(problem: &AttackProblem<'_>, cfg: &OptiConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let d = problem.graph.num_features();
    let m = problem.candidates().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(InjectionPlan, Evaluation)> = None;
    let mut iterations = 0;
    for restart in 0..cfg.restarts {
        let mut attr_logits = Tensor::zeros(1, d);
        let mut edge_scores = Tensor::zeros(1, m);
        let mut opt = RmsProp::new(RmsPropConfig::with_lr(cfg.lr));
        let mut since_improved = 0;
        for it in 0..cfg.max_iters {
            iterations += 1;
            let eps = cfg.gumbel.eps_at(it);
            let mut tape = Tape::new();
            let av = tape.param(attr_logits.clone());
            let ev = tape.param(edge_scores.clone());
            let attrs = if problem.is_discrete() {
                let noise = TopKNoise::sample(d, problem.attr_budget(), &mut rng);
                gumbel_topk_on_tape(&mut tape, av, cfg.gumbel.tau, eps, &noise)?
            } else {
                problem.record_continuous_attributes(&mut tape, av)?
            };
            let noise = TopKNoise::sample(m, problem.edge_budget(), &mut rng);
            let edges = gumbel_topk_on_tape(&mut tape, ev, cfg.gumbel.tau, eps, &noise)?;
            let loss = problem.record_loss(&mut tape, attrs, edges)?;
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("OPTI restart {restart} iteration {it}"),
                });
            }

            let hard = problem.harden_plan(tape.value(attrs).data(), tape.value(edges).data());
            let eval = problem.evaluate(&hard)?;
            let improved = match &best {
                None => true,
                Some((_, b)) => eval.loss < b.loss - cfg.tol,
            };
            if improved {
                best = Some((hard, eval));
                since_improved = 0;
            } else {
                since_improved += 1;
                if since_improved >= cfg.patience {
                    break;
                }
            }

            let mut grads = tape.backward(loss)?;
            let ga = grads.take(av).unwrap_or_else(|| Tensor::zeros(1, d));
            let ge = grads.take(ev).unwrap_or_else(|| Tensor::zeros(1, m));
            opt.step(&mut [&mut attr_logits, &mut edge_scores], &[&ga, &ge])?;
        }
        log::debug!("OPTI restart {restart} done after {iterations} iterations");
    }
    let (plan, eval) = best.expect("at least one iteration ran");
    Ok(AttackOutcome {
        plan,
        loss: eval.loss,
        success: eval.success,
        wall_time: start.elapsed().as_secs_f64(),
        iterations,
    })
}

#[cfg(test)]
mod tests;
