use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{RmsProp, RmsPropConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyPattern, Graph, Split};
use crate::models::{argmax, propagate, ModelKind, SurrogateModel, SurrogateParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            kind: ModelKind::Gcn,
            hidden: 64,
            lr: 1e-2,
            weight_decay: 5e-4,
            epochs: 300,
            patience: 30,
            alpha: 0.1,
            steps: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_accuracy: f64,
}

fn accuracy(logits: &Tensor, nodes: &[usize], labels: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes
        .iter()
        .filter(|&&v| argmax(logits.row(v)) == labels[v])
        .count();
    hits as f64 / nodes.len() as f64
}

/// Full-batch training with cross-entropy on training nodes. Returns the
/// weights of the epoch with the best validation accuracy (training
/// accuracy when there are no validation nodes).
pub fn train_surrogate(g: &Graph, cfg: &SurrogateConfig) -> Result<(SurrogateModel, TrainReport)> {
    if cfg.hidden == 0 || cfg.epochs == 0 {
        return Err(Error::Config("hidden width and epochs must be positive".into()));
    }
    let train = g.nodes_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Precondition("no training nodes".into()));
    }
    let val = g.nodes_in(Split::Val);
    let monitor = if val.is_empty() { &train } else { &val };
    let train_labels: Vec<usize> = train.iter().map(|&v| g.label(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = SurrogateParams {
        kind: cfg.kind,
        w0: Tensor::glorot(g.num_features(), cfg.hidden, &mut rng),
        w1: Tensor::glorot(cfg.hidden, g.num_classes(), &mut rng),
        alpha: cfg.alpha,
        steps: cfg.steps,
        graph_checksum: None,
    };
    params.validate()?;
    let pattern = AdjacencyPattern::clean(g);
    let values = Tensor::row_vector(pattern.normalized_values(&[])?);
    let mut opt = RmsProp::new(RmsPropConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });

    let mut best = (params.w0.clone(), params.w1.clone());
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_run = 0;
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        tape.reset();
        let x = tape.constant(g.attributes().clone());
        let vals = tape.constant(values.clone());
        let w0 = tape.param(params.w0.clone());
        let w1 = tape.param(params.w1.clone());
        let xw0 = tape.matmul(x, w0)?;
        let logits = propagate(&mut tape, &params, w1, &pattern, vals, xw0)?;

        // Validation accuracy of the weights that produced these logits.
        let acc = accuracy(tape.value(logits), monitor, g.labels());
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best = (params.w0.clone(), params.w1.clone());
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }

        let loss = tape.softmax_cross_entropy(logits, &train, &train_labels)?;
        let lv = tape.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                context: format!("surrogate training epoch {epoch}"),
            });
        }
        log::trace!("surrogate epoch {epoch}: loss {lv:.5} monitor acc {acc:.4}");
        let mut grads = tape.backward(loss)?;
        let g0 = grads.take(w0).expect("w0 is a parameter");
        let g1 = grads.take(w1).expect("w1 is a parameter");
        opt.step(&mut [&mut params.w0, &mut params.w1], &[&g0, &g1])?;
    }
    params.w0 = best.0;
    params.w1 = best.1;
    let model = SurrogateModel::new(params, g)?;
    let train_accuracy = accuracy(model.clean_probs(), &train, g.labels());
    let report = TrainReport {
        epochs_run,
        best_epoch,
        best_val_accuracy: best_acc,
        train_accuracy,
    };
    log::debug!("surrogate trained: {report:?}");
    Ok((model, report))
}
