//! The trainable injection generator: an attribute network over target and
//! class representations, followed by an edge network that scores every
//! candidate given the generated attributes.

mod checkpoint;
mod train;

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackOutcome, AttackProblem};
use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{AttrKind, InjectionPlan};
use crate::gumbel::{gumbel_topk_on_tape, harden, TopKNoise};

pub use checkpoint::{load_gnia, read_gnia, save_gnia, write_gnia};
pub use train::{gnia_train, gnia_tune, GniaTrainConfig, GniaTrainReport, GniaTuneResult, LR_GRID};

/// Components replaced or cut for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Attributes copied from a random existing node.
    pub no_attr: bool,
    /// Edges chosen uniformly at random among candidates.
    pub no_edge: bool,
    /// Edge scores do not see the generated attributes.
    pub no_joint: bool,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match (self.no_attr, self.no_edge, self.no_joint) {
            (false, false, false) => "full",
            (true, false, false) => "no_attr",
            (false, true, false) => "no_edge",
            (false, false, true) => "no_joint",
            _ => "mixed",
        }
    }
}

/// Weights of the attribute network (`wa*`, `ba*`) and the edge network
/// (`we*`, `be*`).
///
/// The attribute network reads `[r_t || u_t]` (width `h + 2d`), the edge
/// network reads `[r_inj || r_t || u_t || r_c]` (width `3h + 2d`) once per
/// candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GniaParams {
    pub wa0: Tensor,
    pub ba0: Tensor,
    pub wa1: Tensor,
    pub ba1: Tensor,
    pub we0: Tensor,
    pub be0: Tensor,
    pub we1: Tensor,
    pub be1: Tensor,
    pub attr_kind: AttrKind,
    pub classes: usize,
    pub tau: f64,
    pub ablation: Ablation,
}

impl GniaParams {
    /// Glorot weights and zero biases.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        h: usize,
        classes: usize,
        h_a: usize,
        h_e: usize,
        attr_kind: AttrKind,
        rng: &mut R,
    ) -> Self {
        GniaParams {
            wa0: Tensor::glorot(h + 2 * d, h_a, rng),
            ba0: Tensor::zeros(1, h_a),
            wa1: Tensor::glorot(h_a, d, rng),
            ba1: Tensor::zeros(1, d),
            we0: Tensor::glorot(3 * h + 2 * d, h_e, rng),
            be0: Tensor::zeros(1, h_e),
            we1: Tensor::glorot(h_e, 1, rng),
            be1: Tensor::zeros(1, 1),
            attr_kind,
            classes,
            tau: 1.0,
            ablation: Ablation::default(),
        }
    }

    pub fn features(&self) -> usize {
        self.wa1.cols()
    }

    pub fn surrogate_hidden(&self) -> usize {
        self.wa0.rows() - 2 * self.features()
    }

    pub fn attr_hidden(&self) -> usize {
        self.wa0.cols()
    }

    pub fn edge_hidden(&self) -> usize {
        self.we0.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [&self.wa0, &self.ba0, &self.wa1, &self.ba1, &self.we0, &self.be0, &self.we1, &self.be1]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.wa0,
            &mut self.ba0,
            &mut self.wa1,
            &mut self.ba1,
            &mut self.we0,
            &mut self.be0,
            &mut self.we1,
            &mut self.be1,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.features();
        let h_a = self.attr_hidden();
        let h_e = self.edge_hidden();
        if self.wa0.rows() < 2 * d {
            return Err(Error::shape("gnia", "attribute input narrower than 2d"));
        }
        let h = self.surrogate_hidden();
        let expected = [
            (h + 2 * d, h_a),
            (1, h_a),
            (h_a, d),
            (1, d),
            (3 * h + 2 * d, h_e),
            (1, h_e),
            (h_e, 1),
            (1, 1),
        ];
        for (t, &shape) in self.tensors().iter().zip(&expected) {
            if t.shape() != shape {
                return Err(Error::shape("gnia", format!("tensor {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { context: "generator weights".into() });
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Checks the generator fits the surrogate and graph of a problem.
    pub fn check_problem(&self, problem: &AttackProblem<'_>) -> Result<()> {
        let g = problem.graph;
        if self.features() != g.num_features()
            || self.surrogate_hidden() != problem.model.hidden_dim()
            || self.classes != g.num_classes()
            || self.attr_kind != g.attr_kind()
        {
            return Err(Error::shape(
                "gnia",
                format!(
                    "generator (d={}, h={}, K={}, {:?}) does not fit problem (d={}, h={}, K={}, {:?})",
                    self.features(),
                    self.surrogate_hidden(),
                    self.classes,
                    self.attr_kind,
                    g.num_features(),
                    problem.model.hidden_dim(),
                    g.num_classes(),
                    g.attr_kind()
                ),
            ));
        }
        Ok(())
    }
}

/// Surrogate-derived inputs of one attack instance: `[r_t || u_t]` and the
/// candidates' hidden rows.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFeatures {
    pub target: Tensor,
    pub candidates: Tensor,
}

impl InstanceFeatures {
    /// Length of `r_t`, the first `hidden` entries of `target`.
    pub fn target_norm(&self, hidden: usize) -> f64 {
        self.target.data()[..hidden].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `r_t` is the mean clean hidden row of the targets; `u_t` the mean of
/// `[u_y || u_k]` over targets with `k` the clean runner-up class.
pub fn instance_features(problem: &AttackProblem<'_>) -> Result<InstanceFeatures> {
    let model = problem.model;
    let mut target = model.hidden_representation(problem.targets())?;
    let d = model.features();
    let mut u = vec![0.0; 2 * d];
    for (&t, &y) in problem.targets().iter().zip(problem.labels()) {
        let k = model.most_likely_class(t, y);
        for (acc, v) in u.iter_mut().zip(model.class_representation(y, k)?) {
            *acc += v;
        }
    }
    let scale = 1.0 / problem.targets().len() as f64;
    target.extend(u.iter().map(|v| v * scale));
    Ok(InstanceFeatures {
        target: Tensor::row_vector(target),
        candidates: model.clean_hidden().gather_rows(problem.candidates()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Relaxed attributes and edges stay on the tape.
    Train,
    /// Noise-free relaxations are hardened before evaluation.
    Infer,
}

/// Gumbel noise frozen for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardNoise {
    pub eps: f64,
    pub attributes: Option<TopKNoise>,
    pub edges: TopKNoise,
}

impl ForwardNoise {
    pub fn sample<R: Rng + ?Sized>(problem: &AttackProblem<'_>, eps: f64, rng: &mut R) -> Self {
        let d = problem.graph.num_features();
        ForwardNoise {
            eps,
            attributes: problem
                .is_discrete()
                .then(|| TopKNoise::sample(d, problem.attr_budget(), rng)),
            edges: TopKNoise::sample(problem.candidates().len(), problem.edge_budget(), rng),
        }
    }

    pub fn zeros(problem: &AttackProblem<'_>) -> Self {
        let d = problem.graph.num_features();
        ForwardNoise {
            eps: 0.0,
            attributes: problem
                .is_discrete()
                .then(|| TopKNoise::zeros(d, problem.attr_budget())),
            edges: TopKNoise::zeros(problem.candidates().len(), problem.edge_budget()),
        }
    }
}

/// Replacements drawn by the random strategy for ablated components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub attributes: Option<Vec<f64>>,
    pub edges: Option<Vec<f64>>,
}

impl Overrides {
    pub fn sample<R: Rng + ?Sized>(ablation: Ablation, problem: &AttackProblem<'_>, rng: &mut R) -> Self {
        let g = problem.graph;
        Overrides {
            attributes: ablation
                .no_attr
                .then(|| g.attributes().row(rng.random_range(0..g.num_nodes())).to_vec()),
            edges: ablation.no_edge.then(|| {
                let m = problem.candidates().len();
                let mut e = vec![0.0; m];
                for j in sample(rng, m, problem.edge_budget()) {
                    e[j] = 1.0;
                }
                e
            }),
        }
    }
}

/// Tape handles of one recorded forward pass.
pub struct Recorded {
    pub params: [Var; 8],
    pub attributes: Var,
    pub edges: Var,
    pub scores: Option<Var>,
}

fn dense_layer(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

/// Records attributes then edges for one instance. In infer mode discrete
/// attributes are hardened before they guide the edge network, and the
/// edges are hardened last.
pub fn record_generator(
    tape: &mut Tape,
    params: &GniaParams,
    problem: &AttackProblem<'_>,
    feats: &InstanceFeatures,
    mode: Mode,
    noise: &ForwardNoise,
    overrides: &Overrides,
) -> Result<Recorded> {
    let pv: Vec<Var> = params.tensors().iter().map(|t| tape.param((*t).clone())).collect();
    let pv: [Var; 8] = pv.try_into().expect("eight tensors");
    let [wa0, ba0, wa1, ba1, we0, be0, we1, be1] = pv;
    let tau = params.tau;
    let target = tape.constant(feats.target.clone());

    let attributes = match &overrides.attributes {
        Some(a) => tape.constant(Tensor::row_vector(a.clone())),
        None => {
            let hidden = dense_layer(tape, target, wa0, ba0)?;
            let hidden = tape.relu(hidden);
            let logits = dense_layer(tape, hidden, wa1, ba1)?;
            match problem.graph.attr_kind() {
                AttrKind::Continuous => problem.record_continuous_attributes(tape, logits)?,
                AttrKind::Discrete => {
                    let an = noise
                        .attributes
                        .as_ref()
                        .ok_or_else(|| Error::Precondition("missing attribute noise".into()))?;
                    let soft = gumbel_topk_on_tape(tape, logits, tau, noise.eps, an)?;
                    match mode {
                        Mode::Train => soft,
                        Mode::Infer => {
                            let hard = harden(tape.value(soft).data(), problem.attr_budget());
                            tape.constant(Tensor::row_vector(hard))
                        }
                    }
                }
            }
        }
    };

    let (edges, scores) = match &overrides.edges {
        Some(e) => (tape.constant(Tensor::row_vector(e.clone())), None),
        None => {
            let m = problem.candidates().len();
            let r_inj = if params.ablation.no_joint {
                tape.constant(Tensor::zeros(1, problem.model.hidden_dim()))
            } else {
                let w0 = tape.constant(problem.model.params().w0.clone());
                let t = tape.matmul(attributes, w0)?;
                let t = tape.relu(t);
                // Box-corner attributes give a representation several times
                // longer than any aggregated one, which drowns the target
                // and candidate inputs; match the target's length instead.
                tape.rescale_norm(t, feats.target_norm(problem.model.hidden_dim()))
            };
            let shared = tape.concat_cols(&[r_inj, target])?;
            let shared = tape.repeat_rows(shared, m)?;
            let cands = tape.constant(feats.candidates.clone());
            let input = tape.concat_cols(&[shared, cands])?;
            let hidden = dense_layer(tape, input, we0, be0)?;
            let hidden = tape.relu(hidden);
            let col = dense_layer(tape, hidden, we1, be1)?;
            let row = tape.transpose(col);
            let soft = gumbel_topk_on_tape(tape, row, tau, noise.eps, &noise.edges)?;
            let edges = match mode {
                Mode::Train => soft,
                Mode::Infer => {
                    let hard = harden(tape.value(soft).data(), problem.edge_budget());
                    tape.constant(Tensor::row_vector(hard))
                }
            };
            (edges, Some(row))
        }
    };
    Ok(Recorded {
        params: pv,
        attributes,
        edges,
        scores,
    })
}

/// Relaxed (train) or hardened (infer) plan with its surrogate loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub plan: InjectionPlan,
    pub loss: f64,
}

pub fn gnia_forward(
    params: &GniaParams,
    problem: &AttackProblem<'_>,
    feats: &InstanceFeatures,
    mode: Mode,
    noise: &ForwardNoise,
    overrides: &Overrides,
) -> Result<ForwardResult> {
    params.check_problem(problem)?;
    let mut tape = Tape::new();
    let rec = record_generator(&mut tape, params, problem, feats, mode, noise, overrides)?;
    let loss = problem.record_loss(&mut tape, rec.attributes, rec.edges)?;
    let attributes = tape.value(rec.attributes).data().to_vec();
    let edges = tape.value(rec.edges).data().to_vec();
    let plan = match mode {
        Mode::Train => problem.plan(attributes, edges, false),
        Mode::Infer => problem.harden_plan(&attributes, &edges),
    };
    Ok(ForwardResult {
        plan,
        loss: tape.scalar(loss),
    })
}

/// Train-mode loss and its gradient with respect to every generator
/// tensor, in [`GniaParams::tensors`] order.
pub fn gnia_loss_and_grad(
    params: &GniaParams,
    problem: &AttackProblem<'_>,
    feats: &InstanceFeatures,
    noise: &ForwardNoise,
    overrides: &Overrides,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let rec = record_generator(&mut tape, params, problem, feats, Mode::Train, noise, overrides)?;
    let loss = problem.record_loss(&mut tape, rec.attributes, rec.edges)?;
    let value = tape.scalar(loss);
    let mut grads: Gradients = tape.backward(loss)?;
    let out = rec
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    Ok((value, out))
}

/// Single forward pass producing a hardened plan. `rng` only feeds the
/// random components of ablated generators. Timing covers feature lookup
/// and generation; the success flags come from a separate surrogate
/// evaluation that is not timed.
pub fn gnia_infer<R: Rng + ?Sized>(
    params: &GniaParams,
    problem: &AttackProblem<'_>,
    rng: &mut R,
) -> Result<AttackOutcome> {
    params.check_problem(problem)?;
    let start = Instant::now();
    let feats = instance_features(problem)?;
    let overrides = Overrides::sample(params.ablation, problem, rng);
    let noise = ForwardNoise::zeros(problem);
    let mut tape = Tape::new();
    let rec = record_generator(&mut tape, params, problem, &feats, Mode::Infer, &noise, &overrides)?;
    let plan = problem.harden_plan(tape.value(rec.attributes).data(), tape.value(rec.edges).data());
    let wall_time = start.elapsed().as_secs_f64();
    let eval = problem.evaluate(&plan)?;
    Ok(AttackOutcome {
        plan,
        loss: eval.loss,
        success: eval.success,
        wall_time,
        iterations: 1,
    })
}

#[cfg(test)]
mod tests;
