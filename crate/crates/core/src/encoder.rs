//! One-hidden-layer sparse autoencoder over normalized state vectors.
//!
//! The latent layer and the output layer are both sigmoid. The training
//! objective is mean squared reconstruction error plus `beta` times the sum
//! over latent units of `KL(D || mean activation)`, where the mean is taken
//! over the batch.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{sigmoid, Scalar};

pub const DEFAULT_LATENT_DIM: usize = 32;

/// Weights of the encoder and decoder, stored row-major. The same shape is
/// used for gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EncoderParams<T> {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// `latent_dim x input_dim`
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    /// `input_dim x latent_dim`
    pub w_dec: Vec<T>,
    pub b_dec: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsityConfig {
    /// Target mean activation `D`, in `(0, 1)`.
    pub target: f64,
    pub beta: f64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            target: 0.05,
            beta: 3.0,
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::arg(format!(
                "sparsity target must be in (0, 1), got {}",
                self.target
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::arg(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a new best training loss.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 0,
            optimizer: Optimizer::Adam,
            patience: 5,
        }
    }
}

/// Result of [`train`]: the lowest-loss parameters seen and the full-dataset
/// loss before training (`loss_history[0]`) and after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Training<T> {
    pub params: EncoderParams<T>,
    pub loss_history: Vec<T>,
    pub best_epoch: usize,
}

impl<T: Scalar> Training<T> {
    pub fn initial_loss(&self) -> T {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> T {
        self.loss_history[self.best_epoch]
    }
}

struct Activations<T> {
    hidden: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            latent_dim,
            w_enc: vec![T::zero(); latent_dim * input_dim],
            b_enc: vec![T::zero(); latent_dim],
            w_dec: vec![T::zero(); input_dim * latent_dim],
            b_dec: vec![T::zero(); input_dim],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng>(input_dim: usize, latent_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, latent_dim);
        let limit = (6.0 / (input_dim + latent_dim) as f64).sqrt();
        for w in p.w_enc.iter_mut().chain(p.w_dec.iter_mut()) {
            *w = T::of(rng.random_range(-limit..=limit));
        }
        p
    }

    pub fn buffers(&self) -> [&Vec<T>; 4] {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.w_enc,
            &mut self.b_enc,
            &mut self.w_dec,
            &mut self.b_dec,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::arg(format!(
                "input has dimension {}, encoder expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn activations(&self, x: &[T]) -> Activations<T> {
        let hidden: Vec<T> = (0..self.latent_dim)
            .map(|i| {
                let row = &self.w_enc[i * self.input_dim..(i + 1) * self.input_dim];
                let z = row
                    .iter()
                    .zip(x)
                    .fold(self.b_enc[i], |acc, (&w, &v)| acc + w * v);
                sigmoid(z)
            })
            .collect();
        let output = (0..self.input_dim)
            .map(|j| {
                let row = &self.w_dec[j * self.latent_dim..(j + 1) * self.latent_dim];
                let z = row
                    .iter()
                    .zip(&hidden)
                    .fold(self.b_dec[j], |acc, (&w, &h)| acc + w * h);
                sigmoid(z)
            })
            .collect();
        Activations { hidden, output }
    }

    /// Returns `(latent, reconstruction)`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let a = self.activations(x);
        Ok((a.hidden, a.output))
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.activations(x).hidden)
    }
}

/// The raw-features pathway: the state vector is its own representation.
pub fn raw_passthrough<T: Clone>(x: &[T]) -> Vec<T> {
    x.to_vec()
}

const KL_CLAMP: f64 = 1e-6;

fn clamp_activation<T: Scalar>(h: T) -> T {
    h.max(T::of(KL_CLAMP)).min(T::of(1.0 - KL_CLAMP))
}

/// `KL(target || mean_activation)` for Bernoulli variables.
pub fn bernoulli_kl<T: Scalar>(target: T, mean_activation: T) -> T {
    let h = clamp_activation(mean_activation);
    let one = T::one();
    target * (target / h).ln() + (one - target) * ((one - target) / (one - h)).ln()
}

/// Components of the sparse autoencoder objective on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts<T> {
    pub reconstruction: T,
    pub sparsity: T,
    pub mean_activation: Vec<T>,
}

impl<T: Scalar> LossParts<T> {
    pub fn total(&self) -> T {
        self.reconstruction + self.sparsity
    }
}

fn check_batch<T: Scalar, B: AsRef<[T]>>(batch: &[B], params: &EncoderParams<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    for x in batch {
        params.check_input(x.as_ref())?;
    }
    Ok(())
}

pub fn loss_parts<T: Scalar, B: AsRef<[T]>>(
    batch: &[B],
    params: &EncoderParams<T>,
    sparsity: &SparsityConfig,
) -> Result<LossParts<T>> {
    check_batch(batch, params)?;
    let m = T::of_usize(batch.len());
    let mut recon = T::zero();
    let mut mean_activation = vec![T::zero(); params.latent_dim];
    for x in batch {
        let x = x.as_ref();
        let a = params.activations(x);
        recon = recon
            + a.output
                .iter()
                .zip(x)
                .map(|(&o, &v)| (o - v) * (o - v))
                .fold(T::zero(), |acc, e| acc + e);
        for (acc, &h) in mean_activation.iter_mut().zip(&a.hidden) {
            *acc = *acc + h;
        }
    }
    for h in &mut mean_activation {
        *h = *h / m;
    }
    let target = T::of(sparsity.target);
    let kl = mean_activation
        .iter()
        .map(|&h| bernoulli_kl(target, h))
        .fold(T::zero(), |acc, v| acc + v);
    Ok(LossParts {
        reconstruction: recon / m,
        sparsity: T::of(sparsity.beta) * kl,
        mean_activation,
    })
}

pub fn sparse_loss<T: Scalar, B: AsRef<[T]>>(
    batch: &[B],
    params: &EncoderParams<T>,
    sparsity: &SparsityConfig,
) -> Result<T> {
    Ok(loss_parts(batch, params, sparsity)?.total())
}

/// Analytic gradient of [`sparse_loss`] with respect to every weight and bias.
pub fn loss_gradient<T: Scalar, B: AsRef<[T]>>(
    batch: &[B],
    params: &EncoderParams<T>,
    sparsity: &SparsityConfig,
) -> Result<EncoderParams<T>> {
    check_batch(batch, params)?;
    let (n_in, n_lat) = (params.input_dim, params.latent_dim);
    let m = T::of_usize(batch.len());
    let acts: Vec<Activations<T>> = batch
        .iter()
        .map(|x| params.activations(x.as_ref()))
        .collect();

    // d(beta * KL)/d(mean activation), spread evenly over the batch.
    let target = T::of(sparsity.target);
    let beta = T::of(sparsity.beta);
    let one = T::one();
    let lo = T::of(KL_CLAMP);
    let hi = T::of(1.0 - KL_CLAMP);
    let sparsity_grad: Vec<T> = (0..n_lat)
        .map(|i| {
            let h = acts
                .iter()
                .map(|a| a.hidden[i])
                .fold(T::zero(), |s, v| s + v)
                / m;
            if h < lo || h > hi {
                T::zero()
            } else {
                beta * (-target / h + (one - target) / (one - h)) / m
            }
        })
        .collect();

    let two_over_m = (one + one) / m;
    let mut grad = EncoderParams::zeros(n_in, n_lat);
    let mut delta_out = vec![T::zero(); n_in];
    let mut delta_hidden = vec![T::zero(); n_lat];
    for (x, a) in batch.iter().zip(&acts) {
        let x = x.as_ref();
        for j in 0..n_in {
            let o = a.output[j];
            delta_out[j] = two_over_m * (o - x[j]) * o * (one - o);
        }
        for i in 0..n_lat {
            let back = (0..n_in).fold(sparsity_grad[i], |acc, j| {
                acc + params.w_dec[j * n_lat + i] * delta_out[j]
            });
            let h = a.hidden[i];
            delta_hidden[i] = back * h * (one - h);
        }
        for j in 0..n_in {
            let d = delta_out[j];
            grad.b_dec[j] = grad.b_dec[j] + d;
            let row = &mut grad.w_dec[j * n_lat..(j + 1) * n_lat];
            for (g, &h) in row.iter_mut().zip(&a.hidden) {
                *g = *g + d * h;
            }
        }
        for i in 0..n_lat {
            let d = delta_hidden[i];
            grad.b_enc[i] = grad.b_enc[i] + d;
            let row = &mut grad.w_enc[i * n_in..(i + 1) * n_in];
            for (g, &v) in row.iter_mut().zip(x) {
                *g = *g + d * v;
            }
        }
    }
    Ok(grad)
}

enum OptimizerState<T> {
    Sgd,
    Adam {
        m: EncoderParams<T>,
        v: EncoderParams<T>,
        step: i32,
    },
}

impl<T: Scalar> OptimizerState<T> {
    fn new(kind: Optimizer, like: &EncoderParams<T>) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam {
                m: EncoderParams::zeros(like.input_dim, like.latent_dim),
                v: EncoderParams::zeros(like.input_dim, like.latent_dim),
                step: 0,
            },
        }
    }

    fn apply(&mut self, params: &mut EncoderParams<T>, grad: &EncoderParams<T>, lr: T) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.buffers_mut().into_iter().zip(grad.buffers()) {
                    for (w, &d) in p.iter_mut().zip(g) {
                        *w = *w - lr * d;
                    }
                }
            }
            OptimizerState::Adam { m, v, step } => {
                let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
                let one = T::one();
                *step += 1;
                let c1 = one - b1.powi(*step);
                let c2 = one - b2.powi(*step);
                let bufs = params
                    .buffers_mut()
                    .into_iter()
                    .zip(grad.buffers())
                    .zip(m.buffers_mut().into_iter().zip(v.buffers_mut()));
                for ((p, g), (mb, vb)) in bufs {
                    for k in 0..p.len() {
                        let d = g[k];
                        mb[k] = b1 * mb[k] + (one - b1) * d;
                        vb[k] = b2 * vb[k] + (one - b2) * d * d;
                        let m_hat = mb[k] / c1;
                        let v_hat = vb[k] / c2;
                        p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn validate_train_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.patience == 0 {
        return Err(Error::arg(
            "epochs, batch_size and patience must be positive",
        ));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::arg(format!(
            "learning_rate must be finite and >= 0, got {}",
            cfg.learning_rate
        )));
    }
    Ok(())
}

/// Minibatch training from a seeded initialization.
pub fn train<T: Scalar, B: AsRef<[T]>>(
    dataset: &[B],
    latent_dim: usize,
    cfg: &TrainConfig,
    sparsity: &SparsityConfig,
) -> Result<Training<T>> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot train an encoder on an empty dataset"));
    }
    if latent_dim == 0 {
        return Err(Error::arg("latent_dim must be positive"));
    }
    validate_train_config(cfg)?;
    sparsity.validate()?;
    let input_dim = dataset[0].as_ref().len();
    let mut init_rng = rng::substream(cfg.seed, rng::ENCODER_INIT);
    let params = EncoderParams::init(input_dim, latent_dim, &mut init_rng);
    train_from(dataset, params, cfg, sparsity)
}

/// Continues training from the given parameters.
pub fn train_from<T: Scalar, B: AsRef<[T]>>(
    dataset: &[B],
    mut params: EncoderParams<T>,
    cfg: &TrainConfig,
    sparsity: &SparsityConfig,
) -> Result<Training<T>> {
    validate_train_config(cfg)?;
    sparsity.validate()?;
    let lr = T::of(cfg.learning_rate);
    let mut shuffle_rng = rng::substream(cfg.seed, rng::SHUFFLE);
    let mut opt = OptimizerState::new(cfg.optimizer, &params);

    let diverged = |epoch| Error::TrainingDiverged {
        epoch,
        learning_rate: cfg.learning_rate,
    };
    let initial = sparse_loss(dataset, &params, sparsity)?;
    if !initial.is_finite() {
        return Err(diverged(0));
    }
    let mut history = vec![initial];
    let mut best = (initial, 0usize, params.clone());
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[T]> = chunk.iter().map(|&i| dataset[i].as_ref()).collect();
            let grad = loss_gradient(&batch, &params, sparsity)?;
            opt.apply(&mut params, &grad, lr);
        }
        let loss = sparse_loss(dataset, &params, sparsity)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(diverged(epoch));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, epoch, params.clone());
        } else if epoch - best.1 >= cfg.patience {
            log::debug!("encoder early stop at epoch {epoch}");
            break;
        }
    }

    Ok(Training {
        params: best.2,
        loss_history: history,
        best_epoch: best.1,
    })
}
