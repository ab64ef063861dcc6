//! Two-layer GCN and APPNP node classifiers used as attack surrogates and
//! as victims.

mod checkpoint;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{best_other_class, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyPattern, Graph, NormalizedAdjacencyOp, PerturbedView};

pub use checkpoint::{load_surrogate, read_surrogate, save_surrogate, write_surrogate};
pub use train::{train_surrogate, SurrogateConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Appnp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "appnp" => Ok(ModelKind::Appnp),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Appnp => "appnp",
        })
    }
}

/// Weights of a two-layer model. `w0` is `d x h`, `w1` is `h x K`.
///
/// GCN: `softmax(A relu(A X W0) W1)`.
/// APPNP: `H = relu(X W0) W1`, then `P` rounds of
/// `Z <- (1 - alpha) A Z + alpha H` starting from `Z = H`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateParams {
    pub kind: ModelKind,
    pub w0: Tensor,
    pub w1: Tensor,
    pub alpha: f64,
    pub steps: usize,
    /// Checksum of the graph the weights were trained on, when known.
    pub graph_checksum: Option<u64>,
}

impl SurrogateParams {
    pub fn gcn(w0: Tensor, w1: Tensor) -> Self {
        SurrogateParams {
            kind: ModelKind::Gcn,
            w0,
            w1,
            alpha: 0.1,
            steps: 10,
            graph_checksum: None,
        }
    }

    pub fn appnp(w0: Tensor, w1: Tensor, alpha: f64, steps: usize) -> Self {
        SurrogateParams {
            kind: ModelKind::Appnp,
            w0,
            w1,
            alpha,
            steps,
            graph_checksum: None,
        }
    }

    pub fn features(&self) -> usize {
        self.w0.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.cols()
    }

    pub fn classes(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w0.cols() != self.w1.rows() {
            return Err(Error::shape(
                "surrogate",
                format!("W0 {:?} incompatible with W1 {:?}", self.w0.shape(), self.w1.shape()),
            ));
        }
        if !self.w0.is_finite() || !self.w1.is_finite() {
            return Err(Error::Config("surrogate weights must be finite".into()));
        }
        if self.kind == ModelKind::Appnp && !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("teleport {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Records the pre-activation first-layer transform `X W0` of a graph, or
/// of a graph plus an injected attribute row.
pub(crate) fn propagate(
    tape: &mut Tape,
    params: &SurrogateParams,
    w1: Var,
    pattern: &AdjacencyPattern,
    values: Var,
    xw0: Var,
) -> Result<Var> {
    let sparse = pattern.sparse();
    match params.kind {
        ModelKind::Gcn => {
            let agg = tape.spmm(sparse, values, xw0)?;
            let h1 = tape.relu(agg);
            let hw = tape.matmul(h1, w1)?;
            tape.spmm(sparse, values, hw)
        }
        ModelKind::Appnp => {
            let h0 = tape.relu(xw0);
            let h = tape.matmul(h0, w1)?;
            appnp_iterate(tape, params, pattern, values, h)
        }
    }
}

fn appnp_iterate(
    tape: &mut Tape,
    params: &SurrogateParams,
    pattern: &AdjacencyPattern,
    values: Var,
    h: Var,
) -> Result<Var> {
    let teleport = tape.scale(h, params.alpha);
    let mut z = h;
    for _ in 0..params.steps {
        let agg = tape.spmm(pattern.sparse(), values, z)?;
        let damped = tape.scale(agg, 1.0 - params.alpha);
        z = tape.add(damped, teleport)?;
    }
    Ok(z)
}

/// A surrogate bound to the graph it attacks, with clean-graph quantities
/// cached. Immutable once built.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    params: SurrogateParams,
    graph_checksum: u64,
    num_nodes: usize,
    clean_pattern: Arc<AdjacencyPattern>,
    clean_values: Vec<f64>,
    /// `X W0` for every base node.
    base_transform: Tensor,
    /// APPNP only: `relu(X W0) W1` for every base node.
    base_head: Option<Tensor>,
    clean_hidden: Tensor,
    clean_probs: Tensor,
    /// `W0 W1`, one column per class.
    class_weights: Tensor,
}

impl SurrogateModel {
    pub fn new(params: SurrogateParams, g: &Graph) -> Result<Self> {
        params.validate()?;
        if params.features() != g.num_features() || params.classes() != g.num_classes() {
            return Err(Error::shape(
                "surrogate",
                format!(
                    "model d={} K={} vs graph d={} K={}",
                    params.features(),
                    params.classes(),
                    g.num_features(),
                    g.num_classes()
                ),
            ));
        }
        let checksum = g.checksum();
        if let Some(expected) = params.graph_checksum {
            if expected != checksum {
                return Err(Error::GraphMismatch {
                    expected,
                    actual: checksum,
                });
            }
        }
        let clean_pattern = Arc::new(AdjacencyPattern::clean(g));
        let clean_values = clean_pattern.normalized_values(&[])?;
        let base_transform = g.attributes().matmul(&params.w0)?;
        let base_head = match params.kind {
            ModelKind::Gcn => None,
            ModelKind::Appnp => Some(base_transform.map(|v| v.max(0.0)).matmul(&params.w1)?),
        };
        let class_weights = params.w0.matmul(&params.w1)?;
        let mut model = SurrogateModel {
            params,
            graph_checksum: checksum,
            num_nodes: g.num_nodes(),
            clean_pattern,
            clean_values,
            base_transform,
            base_head,
            clean_hidden: Tensor::zeros(0, 0),
            clean_probs: Tensor::zeros(0, 0),
            class_weights,
        };
        model.clean_hidden = model.hidden_of(&model.clean_pattern, &model.clean_values, &model.base_transform)?;
        model.clean_probs = model.clean_forward()?;
        Ok(model)
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind
    }

    pub fn graph_checksum(&self) -> u64 {
        self.graph_checksum
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.hidden()
    }

    pub fn classes(&self) -> usize {
        self.params.classes()
    }

    pub fn features(&self) -> usize {
        self.params.features()
    }

    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.num_nodes() != self.num_nodes
            || g.num_features() != self.features()
            || g.num_classes() != self.classes()
        {
            return Err(Error::GraphMismatch {
                expected: self.graph_checksum,
                actual: g.checksum(),
            });
        }
        Ok(())
    }

    fn clean_forward(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let values = tape.constant(Tensor::row_vector(self.clean_values.clone()));
        let xw0 = tape.constant(self.base_transform.clone());
        let w1 = tape.constant(self.params.w1.clone());
        let logits = propagate(&mut tape, &self.params, w1, &self.clean_pattern, values, xw0)?;
        let probs = tape.row_softmax(logits);
        Ok(tape.value(probs).clone())
    }

    fn hidden_of(&self, pattern: &AdjacencyPattern, values: &[f64], xw0: &Tensor) -> Result<Tensor> {
        match self.params.kind {
            ModelKind::Gcn => {
                let m = crate::autodiff::CsrMatrix::new(Arc::clone(pattern.sparse()), values.to_vec())?;
                Ok(m.spmm(xw0)?.map(|v| v.max(0.0)))
            }
            ModelKind::Appnp => Ok(xw0.map(|v| v.max(0.0))),
        }
    }

    /// Class probabilities of every base node on the clean graph.
    pub fn clean_probs(&self) -> &Tensor {
        &self.clean_probs
    }

    /// First-layer hidden rows of the clean graph (post aggregation and
    /// relu for GCN; `relu(X W0)` for APPNP, whose first layer does not
    /// aggregate).
    pub fn clean_hidden(&self) -> &Tensor {
        &self.clean_hidden
    }

    pub fn clean_prediction(&self, v: usize) -> usize {
        argmax(self.clean_probs.row(v))
    }

    /// Mean hidden row of `nodes` on the clean graph.
    pub fn hidden_representation(&self, nodes: &[usize]) -> Result<Vec<f64>> {
        mean_rows_of(&self.clean_hidden, nodes)
    }

    /// Hidden rows of `nodes` on a perturbed view (node ids may include the
    /// injected node), averaged.
    pub fn hidden_representation_view(&self, view: &PerturbedView<'_>, nodes: &[usize]) -> Result<Vec<f64>> {
        let pattern = AdjacencyPattern::with_injection(view.base(), &view.plan().candidates)?;
        let values = pattern.normalized_values(&view.plan().edge_weights)?;
        let xw0 = view.attributes().matmul(&self.params.w0)?;
        let hidden = self.hidden_of(&pattern, &values, &xw0)?;
        mean_rows_of(&hidden, nodes)
    }

    /// `[u_y || u_k]`: columns `y` and `k` of `W0 W1`.
    pub fn class_representation(&self, y: usize, k: usize) -> Result<Vec<f64>> {
        let classes = self.classes();
        for c in [y, k] {
            if c >= classes {
                return Err(Error::LabelOutOfRange { label: c, classes });
            }
        }
        let mut out = self.class_weights.column(y);
        out.extend(self.class_weights.column(k));
        Ok(out)
    }

    /// Feature transformation of an injected attribute row, `relu(a W0)`.
    pub fn transform_injected(&self, attributes: &[f64]) -> Result<Vec<f64>> {
        Ok(Tensor::row_vector(attributes.to_vec())
            .matmul(&self.params.w0)?
            .map(|v| v.max(0.0))
            .into_vec())
    }

    /// Most probable wrong class of `t` on the clean graph; ties go to the
    /// smaller class index.
    pub fn most_likely_class(&self, t: usize, y: usize) -> usize {
        best_other_class(self.clean_probs.row(t), y)
    }

    /// Records the forward pass on the graph plus one injected node whose
    /// attribute row (`1 x d`) and candidate edge weights (`1 x m`) are tape
    /// variables. Returns the `(n + 1) x K` probability matrix.
    pub fn forward_injected(
        &self,
        tape: &mut Tape,
        pattern: &Arc<AdjacencyPattern>,
        attributes: Var,
        edge_weights: Var,
    ) -> Result<Var> {
        let e = tape.value(edge_weights).data().to_vec();
        let values = tape.custom(
            Box::new(NormalizedAdjacencyOp {
                pattern: Arc::clone(pattern),
            }),
            &[edge_weights],
            Tensor::row_vector(pattern.normalized_values(&e)?),
        );
        let w0 = tape.constant(self.params.w0.clone());
        let w1 = tape.constant(self.params.w1.clone());
        let inj_transform = tape.matmul(attributes, w0)?;
        let logits = match (&self.params.kind, &self.base_head) {
            (ModelKind::Appnp, Some(base_head)) => {
                // Base rows of relu(X W0) W1 are constant; only the injected
                // row depends on the attack variables.
                let inj_hidden = tape.relu(inj_transform);
                let inj_head = tape.matmul(inj_hidden, w1)?;
                let base = tape.constant(base_head.clone());
                let h = tape.concat_rows(&[base, inj_head])?;
                appnp_iterate(tape, &self.params, pattern, values, h)?
            }
            _ => {
                let base = tape.constant(self.base_transform.clone());
                let xw0 = tape.concat_rows(&[base, inj_transform])?;
                propagate(tape, &self.params, w1, pattern, values, xw0)?
            }
        };
        Ok(tape.row_softmax(logits))
    }

    /// Class probabilities for all `n + 1` nodes of a view.
    pub fn predict(&self, view: &PerturbedView<'_>) -> Result<Tensor> {
        let pattern = Arc::new(AdjacencyPattern::with_injection(view.base(), &view.plan().candidates)?);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row_vector(view.plan().attributes.clone()));
        let e = tape.constant(Tensor::row_vector(view.plan().edge_weights.clone()));
        let probs = self.forward_injected(&mut tape, &pattern, a, e)?;
        Ok(tape.value(probs).clone())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn mean_rows_of(t: &Tensor, nodes: &[usize]) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(Error::Precondition("empty node list".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&v| v >= t.rows()) {
        return Err(Error::NodeOutOfRange { id: bad, n: t.rows() });
    }
    Ok(t.gather_rows(nodes).mean_rows().into_vec())
}
