use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AttackProblem;
use crate::autodiff::{RmsProp, RmsPropConfig, Tensor};
use crate::error::{Error, Result};
use crate::gnia::{
    gnia_forward, gnia_loss_and_grad, instance_features, Ablation, ForwardNoise, GniaParams, InstanceFeatures, Mode,
    Overrides,
};
use crate::gumbel::GumbelConfig;

/// Learning rates searched by [`gnia_tune`] by default.
pub const LR_GRID: [f64; 3] = [1e-5, 1e-4, 1e-3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GniaTrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub attr_hidden: usize,
    pub edge_hidden: usize,
    /// `tau`, initial `eps` and per-epoch `decay`; `k` is ignored.
    pub gumbel: GumbelConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for GniaTrainConfig {
    fn default() -> Self {
        GniaTrainConfig {
            lr: 1e-3,
            max_epochs: 2000,
            patience: 100,
            batch_size: 32,
            attr_hidden: 512,
            edge_hidden: 512,
            gumbel: GumbelConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl GniaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("need lr > 0, max_epochs >= 1 and batch_size >= 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.attr_hidden == 0 || self.edge_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        GumbelConfig { k: 1, ..self.gumbel }.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GniaTrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_rate: f64,
    /// Hardened validation misclassification rate after each epoch.
    pub val_history: Vec<f64>,
    /// Mean relaxed training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Fraction of instances fully misclassified by the hardened,
/// noise-free generator output.
fn validation_rate(
    params: &GniaParams,
    problems: &[AttackProblem<'_>],
    feats: &[InstanceFeatures],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut hits = 0;
    for (p, f) in problems.iter().zip(feats) {
        let overrides = Overrides::sample(params.ablation, p, rng);
        let out = gnia_forward(params, p, f, Mode::Infer, &ForwardNoise::zeros(p), &overrides)?;
        if p.evaluate(&out.plan)?.all_success() {
            hits += 1;
        }
    }
    Ok(hits as f64 / problems.len() as f64)
}

/// Trains the generator on `train` instances with early stopping on the
/// hardened misclassification rate of `val` instances. Returns the
/// parameters of the best validation epoch.
pub fn gnia_train(
    train: &[AttackProblem<'_>],
    val: &[AttackProblem<'_>],
    cfg: &GniaTrainConfig,
) -> Result<(GniaParams, GniaTrainReport)> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Precondition("no training instances".into()))?;
    if val.is_empty() {
        return Err(Error::Precondition("no validation instances".into()));
    }
    for v in val {
        if train.iter().any(|t| t.targets().iter().any(|x| v.targets().contains(x))) {
            return Err(Error::Precondition("training and validation targets overlap".into()));
        }
    }
    let g = first.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = GniaParams::init(
        g.num_features(),
        first.model.hidden_dim(),
        g.num_classes(),
        cfg.attr_hidden,
        cfg.edge_hidden,
        g.attr_kind(),
        &mut rng,
    );
    params.tau = cfg.gumbel.tau;
    params.ablation = cfg.ablation;
    for p in train.iter().chain(val) {
        params.check_problem(p)?;
    }
    let train_feats = train.iter().map(instance_features).collect::<Result<Vec<_>>>()?;
    let val_feats = val.iter().map(instance_features).collect::<Result<Vec<_>>>()?;

    let mut opt = RmsProp::new(RmsPropConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = params.clone();
    let mut best_rate = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut val_history = Vec::new();
    let mut loss_history = Vec::new();
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    for epoch in 0..cfg.max_epochs {
        let eps = cfg.gumbel.eps_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
            for &i in batch {
                let noise = ForwardNoise::sample(&train[i], eps, &mut rng);
                let overrides = Overrides::sample(params.ablation, &train[i], &mut rng);
                let (loss, grads) = gnia_loss_and_grad(&params, &train[i], &train_feats[i], &noise, &overrides)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("generator training epoch {epoch}"),
                    });
                }
                epoch_loss += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let acc: Vec<Tensor> = acc.into_iter().map(|a| a.scale(scale)).collect();
            let grads: Vec<&Tensor> = acc.iter().collect();
            opt.step(&mut params.tensors_mut(), &grads)?;
        }
        loss_history.push(epoch_loss / train.len() as f64);

        let rate = validation_rate(&params, val, &val_feats, &mut val_rng)?;
        val_history.push(rate);
        log::debug!("generator epoch {epoch}: loss {:.5} val rate {rate:.4}", epoch_loss / train.len() as f64);
        if rate > best_rate {
            best_rate = rate;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let report = GniaTrainReport {
        epochs_run: val_history.len(),
        best_epoch,
        best_val_rate: best_rate,
        val_history,
        loss_history,
    };
    Ok((best, report))
}

/// Outcome of a hyperparameter search.
#[derive(Clone, Debug)]
pub struct GniaTuneResult {
    pub params: GniaParams,
    pub report: GniaTrainReport,
    /// `base` with the selected `lr` and `tau`.
    pub config: GniaTrainConfig,
    /// `(lr, tau, best validation rate)` of every trial, in search order.
    pub trials: Vec<(f64, f64, f64)>,
}

/// Trains once per `(lr, tau)` pair and keeps the run with the highest
/// best validation rate. Ties keep the earlier trial.
pub fn gnia_tune(
    train: &[AttackProblem<'_>],
    val: &[AttackProblem<'_>],
    base: &GniaTrainConfig,
    lrs: &[f64],
    taus: &[f64],
) -> Result<GniaTuneResult> {
    if lrs.is_empty() || taus.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut best: Option<GniaTuneResult> = None;
    let mut trials = Vec::with_capacity(lrs.len() * taus.len());
    for &lr in lrs {
        for &tau in taus {
            let mut cfg = base.clone();
            cfg.lr = lr;
            cfg.gumbel.tau = tau;
            let (params, report) = gnia_train(train, val, &cfg)?;
            log::info!("tuning lr {lr:e} tau {tau}: best val rate {:.4}", report.best_val_rate);
            trials.push((lr, tau, report.best_val_rate));
            if best.as_ref().is_none_or(|b| report.best_val_rate > b.report.best_val_rate) {
                best = Some(GniaTuneResult {
                    params,
                    report,
                    config: cfg,
                    trials: Vec::new(),
                });
            }
        }
    }
    let mut out = best.expect("grid is nonempty");
    out.trials = trials;
    Ok(out)
}
