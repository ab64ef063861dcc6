//! Gumbel-Softmax with an exploration coefficient, masked Gumbel-Top-k and
//! hardening.
//!
//! A relaxed draw is `softmax((z + eps * G) / tau)` with standard Gumbel
//! noise `G`. Top-k sums `k` draws; after each round the index with the
//! largest relaxed weight is masked out of later rounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Score given to masked entries. Large enough that `exp` underflows to an
/// exact zero after shifting by the row maximum.
pub const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub tau: f64,
    pub eps: f64,
    pub k: usize,
    pub seed: u64,
    /// Multiplicative decay applied to `eps` once per epoch.
    pub decay: f64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau: 1.0,
            eps: 1.0,
            k: 1,
            seed: 0,
            decay: 0.99,
        }
    }
}

/// Temperatures searched by default.
pub const TAU_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("exploration must be nonnegative, got {}", self.eps)));
        }
        if self.k == 0 {
            return Err(Error::Config("selection budget must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        Ok(())
    }

    /// Exploration coefficient after `epochs` decay steps.
    pub fn eps_at(&self, epochs: usize) -> f64 {
        self.eps * self.decay.powi(epochs as i32)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `len` i.i.d. standard Gumbel samples.
pub fn sample_gumbel<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break gumbel_from_uniform(u);
            }
        })
        .collect()
}

fn softmax_scaled(scores: impl Iterator<Item = f64>, tau: f64) -> Vec<f64> {
    let mut out: Vec<f64> = scores.map(|s| s / tau).collect();
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in &mut out {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Relaxed draw with caller-supplied noise.
pub fn gumbel_softmax_with_noise(z: &[f64], tau: f64, eps: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if noise.len() != z.len() {
        return Err(Error::shape("gumbel_softmax", format!("{} noise for {} scores", noise.len(), z.len())));
    }
    Ok(softmax_scaled(z.iter().zip(noise).map(|(s, g)| s + eps * g), tau))
}

pub fn gumbel_softmax<R: Rng + ?Sized>(z: &[f64], tau: f64, eps: f64, rng: &mut R) -> Result<Vec<f64>> {
    let noise = sample_gumbel(z.len(), rng);
    gumbel_softmax_with_noise(z, tau, eps, &noise)
}

/// Noise for every round of a Top-k draw. Freezing it makes the relaxed
/// output a deterministic, differentiable function of the scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKNoise {
    rounds: Vec<Vec<f64>>,
}

impl TopKNoise {
    pub fn sample<R: Rng + ?Sized>(len: usize, k: usize, rng: &mut R) -> Self {
        TopKNoise {
            rounds: (0..k).map(|_| sample_gumbel(len, rng)).collect(),
        }
    }

    /// Noise-free rounds, for deterministic inference.
    pub fn zeros(len: usize, k: usize) -> Self {
        TopKNoise {
            rounds: vec![vec![0.0; len]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.rounds.len()
    }

    pub fn len(&self) -> usize {
        self.rounds.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn round(&self, j: usize) -> &[f64] {
        &self.rounds[j]
    }
}

fn check_topk(len: usize, noise: &TopKNoise) -> Result<()> {
    if noise.k() == 0 {
        return Err(Error::Config("selection budget must be at least 1".into()));
    }
    if noise.k() > len {
        return Err(Error::Precondition(format!("cannot select {} of {len} entries", noise.k())));
    }
    if noise.len() != len {
        return Err(Error::shape("gumbel_topk", format!("noise for {} entries, scores have {len}", noise.len())));
    }
    Ok(())
}

fn argmax_unmasked(draw: &[f64], masked: &[bool]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in draw.iter().enumerate() {
        if !masked[i] && (best == usize::MAX || v > draw[best]) {
            best = i;
        }
    }
    best
}

/// Relaxed k-hot vector from frozen noise; `k` is the number of rounds.
pub fn gumbel_topk_with_noise(z: &[f64], tau: f64, eps: f64, noise: &TopKNoise) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_topk(z.len(), noise)?;
    let mut masked = vec![false; z.len()];
    let mut out = vec![0.0; z.len()];
    for j in 0..noise.k() {
        let g = noise.round(j);
        let draw = softmax_scaled(
            (0..z.len()).map(|i| if masked[i] { MASKED } else { z[i] + eps * g[i] }),
            tau,
        );
        for (o, d) in out.iter_mut().zip(&draw) {
            *o += d;
        }
        let pick = argmax_unmasked(&draw, &masked);
        masked[pick] = true;
    }
    Ok(out)
}

pub fn gumbel_topk<R: Rng + ?Sized>(z: &[f64], cfg: &GumbelConfig, rng: &mut R) -> Result<Vec<f64>> {
    if cfg.k > z.len() {
        return Err(Error::Precondition(format!("cannot select {} of {} entries", cfg.k, z.len())));
    }
    let noise = TopKNoise::sample(z.len(), cfg.k, rng);
    gumbel_topk_with_noise(z, cfg.tau, cfg.eps, &noise)
}

/// Records Top-k over a `1 x len` score row on the tape. The masks are read
/// off the forward values and enter the graph as constants.
pub fn gumbel_topk_on_tape(tape: &mut Tape, z: Var, tau: f64, eps: f64, noise: &TopKNoise) -> Result<Var> {
    check_tau(tau)?;
    let len = tape.value(z).len();
    if tape.value(z).rows() != 1 {
        return Err(Error::shape("gumbel_topk", format!("scores must be a row, got {:?}", tape.value(z).shape())));
    }
    check_topk(len, noise)?;
    let mut masked = vec![false; len];
    let mut total: Option<Var> = None;
    for j in 0..noise.k() {
        let g = noise.round(j);
        let shift: Vec<f64> = (0..len)
            .map(|i| if masked[i] { MASKED } else { eps * g[i] })
            .collect();
        let shifted = tape.add_const(z, &Tensor::row_vector(shift))?;
        // Masked entries still depend on z, but their weight is exactly 0.
        let scaled = tape.scale(shifted, 1.0 / tau);
        let draw = tape.row_softmax(scaled);
        let pick = argmax_unmasked(tape.value(draw).data(), &masked);
        masked[pick] = true;
        total = Some(match total {
            None => draw,
            Some(t) => tape.add(t, draw)?,
        });
    }
    Ok(total.expect("at least one round"))
}

/// Exactly `k` ones at the largest entries; ties go to the lower index.
pub fn harden(v: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; v.len()];
    for &i in order.iter().take(k) {
        out[i] = 1.0;
    }
    out
}
