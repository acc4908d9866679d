//! β-VAE goal generator with a Bernoulli pixel likelihood.
//!
//! The encoder maps an image to the mean and log-variance of a diagonal
//! Gaussian posterior, the decoder maps a latent to per-pixel Bernoulli means.
//! The per-sample loss is `β·KL(posterior ‖ N(0, I)) − E[log p(x | z)]`,
//! estimated with reparameterized samples. All reported quantities are nats
//! per sample.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageShape;
use crate::nn::{Activation, AdamConfig, AdamState, DenseGrads, DenseNet, NnError};
use crate::scalar::{standard_normal_vec, Scalar};

/// Decoder means are clamped to `[ε, 1 − ε]`.
pub const DECODER_EPS: f64 = 1e-6;
pub const LOG_VARIANCE_MIN: f64 = -10.0;
pub const LOG_VARIANCE_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid VAE configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub beta: f64,
    /// Hidden layer widths, mirrored between encoder and decoder.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eval_mc_samples: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            beta: 1.0,
            hidden: vec![32],
            learning_rate: 3e-3,
            batch_size: 32,
            eval_mc_samples: 4,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim == 0 {
            return Err("latent_dim must be >= 1".into());
        }
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return Err(format!("beta must be finite and >= 1, got {}", self.beta));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err("hidden widths must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be > 0".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if self.eval_mc_samples == 0 {
            return Err("eval_mc_samples must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T> {
    pub mean: Vec<T>,
    /// Clamped to `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]`.
    pub log_variance: Vec<T>,
}

/// Mean negative β-ELBO and its two components, in nats per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboReport<T> {
    pub neg_beta_elbo: T,
    pub kl_term: T,
    pub recon_nll: T,
    pub n_samples: usize,
}

impl<T: Scalar> ElboReport<T> {
    pub fn from_terms(beta: T, kl_term: T, recon_nll: T, n_samples: usize) -> Self {
        Self {
            neg_beta_elbo: beta * kl_term + recon_nll,
            kl_term,
            recon_nll,
            n_samples,
        }
    }

    /// `|neg_beta_elbo − (β·kl + recon)|`.
    pub fn decomposition_error(&self, beta: T) -> T {
        (self.neg_beta_elbo - (beta * self.kl_term + self.recon_nll)).abs()
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ noise`.
pub fn reparameterize<T: Scalar>(posterior: &GaussianPosterior<T>, noise: &[T]) -> Vec<T> {
    assert_eq!(noise.len(), posterior.mean.len(), "noise length must equal latent dim");
    let half = T::c(0.5);
    posterior
        .mean
        .iter()
        .zip(&posterior.log_variance)
        .zip(noise)
        .map(|((&m, &lv), &n)| m + (lv * half).exp() * n)
        .collect()
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_to_unit_gaussian<T: Scalar>(posterior: &GaussianPosterior<T>) -> T {
    let half = T::c(0.5);
    posterior
        .mean
        .iter()
        .zip(&posterior.log_variance)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

/// Bernoulli log-likelihood `Σ x log m + (1 − x) log(1 − m)`.
pub fn recon_log_prob<T: Scalar>(image: &[T], decoder_means: &[T]) -> T {
    assert_eq!(image.len(), decoder_means.len(), "image and means must have equal length");
    image
        .iter()
        .zip(decoder_means)
        .map(|(&x, &m)| x * m.ln() + (T::one() - x) * (T::one() - m).ln())
        .sum()
}

fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads<T> {
    pub encoder: DenseGrads<T>,
    pub decoder: DenseGrads<T>,
}

impl<T: Scalar> VaeGrads<T> {
    pub fn zeros_like(model: &VaeModel<T>) -> Self {
        Self {
            encoder: DenseGrads::zeros_like(&model.encoder),
            decoder: DenseGrads::zeros_like(&model.decoder),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeOptimizer<T> {
    encoder: AdamState<T>,
    decoder: AdamState<T>,
}

impl<T: Scalar> VaeOptimizer<T> {
    pub fn new(model: &VaeModel<T>, config: AdamConfig) -> Self {
        Self {
            encoder: AdamState::new(&model.encoder, config),
            decoder: AdamState::new(&model.decoder, config),
        }
    }

    pub fn step(&mut self, model: &mut VaeModel<T>, grads: &VaeGrads<T>) {
        self.encoder.step(&mut model.encoder, &grads.encoder);
        self.decoder.step(&mut model.decoder, &grads.decoder);
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VaeMeta {
    latent_dim: usize,
    beta: f64,
    image_shape: ImageShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    pub encoder: DenseNet<T>,
    pub decoder: DenseNet<T>,
    beta: T,
    latent_dim: usize,
    image_shape: ImageShape,
}

impl<T: Scalar> VaeModel<T> {
    pub fn new<R: Rng + ?Sized>(
        config: &VaeConfig,
        image_shape: ImageShape,
        rng: &mut R,
    ) -> Result<Self, VaeError> {
        config.validate().map_err(VaeError::Config)?;
        let d = image_shape.len();
        let mut enc_sizes = vec![d];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(2 * config.latent_dim);
        let mut dec_sizes = vec![config.latent_dim];
        dec_sizes.extend(config.hidden.iter().rev());
        dec_sizes.push(d);
        let encoder = DenseNet::new(&enc_sizes, Activation::Relu, Activation::Identity, rng)?;
        let decoder = DenseNet::new(&dec_sizes, Activation::Relu, Activation::Sigmoid, rng)?;
        Self::from_parts(encoder, decoder, T::c(config.beta), image_shape)
    }

    pub fn from_parts(
        encoder: DenseNet<T>,
        decoder: DenseNet<T>,
        beta: T,
        image_shape: ImageShape,
    ) -> Result<Self, VaeError> {
        if !(beta >= T::one()) {
            return Err(VaeError::Config(format!("beta must be >= 1, got {beta}")));
        }
        let d = image_shape.len();
        if encoder.input_dim() != d {
            return Err(VaeError::DimensionMismatch {
                expected: d,
                got: encoder.input_dim(),
            });
        }
        if encoder.output_dim() % 2 != 0 {
            return Err(VaeError::Config("encoder output must be 2·latent_dim".into()));
        }
        let latent_dim = encoder.output_dim() / 2;
        if decoder.input_dim() != latent_dim {
            return Err(VaeError::DimensionMismatch {
                expected: latent_dim,
                got: decoder.input_dim(),
            });
        }
        if decoder.output_dim() != d {
            return Err(VaeError::DimensionMismatch {
                expected: d,
                got: decoder.output_dim(),
            });
        }
        Ok(Self {
            encoder,
            decoder,
            beta,
            latent_dim,
            image_shape,
        })
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Changes the KL weight; `beta` must stay ≥ 1.
    pub fn set_beta(&mut self, beta: T) -> Result<(), VaeError> {
        if !(beta >= T::one()) {
            return Err(VaeError::Config(format!("beta must be >= 1, got {beta}")));
        }
        self.beta = beta;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image_shape
    }

    fn check_image(&self, image: &[T]) -> Result<(), VaeError> {
        if image.len() != self.image_shape.len() {
            return Err(VaeError::DimensionMismatch {
                expected: self.image_shape.len(),
                got: image.len(),
            });
        }
        Ok(())
    }

    fn split_posterior(&self, raw: &[T]) -> GaussianPosterior<T> {
        let (lo, hi) = (T::c(LOG_VARIANCE_MIN), T::c(LOG_VARIANCE_MAX));
        GaussianPosterior {
            mean: raw[..self.latent_dim].to_vec(),
            log_variance: raw[self.latent_dim..].iter().map(|&v| clamp(v, lo, hi)).collect(),
        }
    }

    pub fn encode(&self, image: &[T]) -> Result<GaussianPosterior<T>, VaeError> {
        self.check_image(image)?;
        Ok(self.split_posterior(&self.encoder.forward(image)))
    }

    /// Posterior mean, the latent used for states and evaluation goals.
    pub fn encode_mean(&self, image: &[T]) -> Result<Vec<T>, VaeError> {
        Ok(self.encode(image)?.mean)
    }

    /// Clamped Bernoulli means for latent `z`.
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>, VaeError> {
        if z.len() != self.latent_dim {
            return Err(VaeError::DimensionMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        let (lo, hi) = (T::c(DECODER_EPS), T::c(1.0 - DECODER_EPS));
        Ok(self
            .decoder
            .forward(z)
            .into_iter()
            .map(|m| clamp(m, lo, hi))
            .collect())
    }

    /// Mean loss over `batch` with explicit reparameterization noise (one
    /// latent-sized vector per image), plus gradients of that mean.
    pub fn loss_and_grads_with_noise(
        &self,
        batch: &[&[T]],
        noise: &[Vec<T>],
    ) -> Result<(ElboReport<T>, VaeGrads<T>), VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        assert_eq!(batch.len(), noise.len(), "one noise vector per image");
        let mut grads = VaeGrads::zeros_like(self);
        let inv_n = T::one() / T::c(batch.len() as f64);
        let half = T::c(0.5);
        let (lv_lo, lv_hi) = (T::c(LOG_VARIANCE_MIN), T::c(LOG_VARIANCE_MAX));
        let (m_lo, m_hi) = (T::c(DECODER_EPS), T::c(1.0 - DECODER_EPS));
        let d = self.latent_dim;
        let mut kl_sum = T::zero();
        let mut rec_sum = T::zero();

        for (&x, eps) in batch.iter().zip(noise) {
            self.check_image(x)?;
            if eps.len() != d {
                return Err(VaeError::DimensionMismatch {
                    expected: d,
                    got: eps.len(),
                });
            }
            let enc = self.encoder.forward_cached(x);
            let raw = enc.output();
            let posterior = self.split_posterior(raw);
            kl_sum += kl_to_unit_gaussian(&posterior);
            let z = reparameterize(&posterior, eps);

            let dec = self.decoder.forward_cached(&z);
            let mut upstream = Vec::with_capacity(x.len());
            let mut rec = T::zero();
            for (&xi, &m_raw) in x.iter().zip(dec.output()) {
                let m = clamp(m_raw, m_lo, m_hi);
                rec += xi * m.ln() + (T::one() - xi) * (T::one() - m).ln();
                let g = if m_raw == m {
                    (-xi / m + (T::one() - xi) / (T::one() - m)) * inv_n
                } else {
                    T::zero()
                };
                upstream.push(g);
            }
            rec_sum += rec;

            let dz = self
                .decoder
                .accumulate_backward(&dec, &upstream, Some(&mut grads.decoder), true)
                .expect("latent gradient");
            let mut enc_up = vec![T::zero(); 2 * d];
            for i in 0..d {
                let mu = posterior.mean[i];
                let lv = posterior.log_variance[i];
                enc_up[i] = self.beta * mu * inv_n + dz[i];
                let raw_lv = raw[d + i];
                if raw_lv >= lv_lo && raw_lv <= lv_hi {
                    let std = (lv * half).exp();
                    enc_up[d + i] =
                        self.beta * half * (lv.exp() - T::one()) * inv_n + dz[i] * half * std * eps[i];
                }
            }
            self.encoder
                .accumulate_backward(&enc, &enc_up, Some(&mut grads.encoder), false);
        }
        let report = ElboReport::from_terms(self.beta, kl_sum * inv_n, -rec_sum * inv_n, batch.len());
        Ok((report, grads))
    }

    /// Single-sample reparameterized loss and gradients, noise drawn from `rng`.
    pub fn beta_elbo_loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &[&[T]],
        rng: &mut R,
    ) -> Result<(ElboReport<T>, VaeGrads<T>), VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        let noise: Vec<Vec<T>> = batch
            .iter()
            .map(|_| standard_normal_vec(rng, self.latent_dim))
            .collect();
        self.loss_and_grads_with_noise(batch, &noise)
    }

    /// Trains for `steps` minibatches drawn uniformly with replacement and
    /// returns the per-step training report.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        dataset: &[&[T]],
        steps: usize,
        batch_size: usize,
        optimizer: &mut VaeOptimizer<T>,
        rng: &mut R,
    ) -> Result<Vec<ElboReport<T>>, VaeError> {
        if dataset.is_empty() {
            return Err(VaeError::EmptyDataset);
        }
        if steps == 0 || batch_size == 0 {
            return Err(VaeError::Config("steps and batch_size must be >= 1".into()));
        }
        let mut history = Vec::with_capacity(steps);
        let mut batch: Vec<&[T]> = Vec::with_capacity(batch_size);
        for _ in 0..steps {
            batch.clear();
            for _ in 0..batch_size {
                batch.push(dataset[rng.random_range(0..dataset.len())]);
            }
            let (report, grads) = self.beta_elbo_loss_and_grads(&batch, rng)?;
            optimizer.step(self, &grads);
            history.push(report);
        }
        Ok(history)
    }

    /// Evaluation with explicit noise: `noise[i][s]` is draw `s` for image `i`.
    pub fn evaluate_elbo_with_noise(
        &self,
        batch: &[&[T]],
        noise: &[Vec<Vec<T>>],
    ) -> Result<ElboReport<T>, VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        assert_eq!(batch.len(), noise.len(), "one noise set per image");
        let mut kl_sum = T::zero();
        let mut rec_sum = T::zero();
        for (&x, draws) in batch.iter().zip(noise) {
            let posterior = self.encode(x)?;
            kl_sum += kl_to_unit_gaussian(&posterior);
            if draws.is_empty() {
                return Err(VaeError::Config("mc_samples must be >= 1".into()));
            }
            let mut rec = T::zero();
            for eps in draws {
                let z = reparameterize(&posterior, eps);
                rec += recon_log_prob(x, &self.decode(&z)?);
            }
            rec_sum += rec / T::c(draws.len() as f64);
        }
        let inv_n = T::one() / T::c(batch.len() as f64);
        Ok(ElboReport::from_terms(self.beta, kl_sum * inv_n, -rec_sum * inv_n, batch.len()))
    }

    /// Monte-Carlo estimate of the report, `mc_samples` draws per image.
    /// Parameters are untouched.
    pub fn evaluate_elbo<R: Rng + ?Sized>(
        &self,
        batch: &[&[T]],
        mc_samples: usize,
        rng: &mut R,
    ) -> Result<ElboReport<T>, VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        if mc_samples == 0 {
            return Err(VaeError::Config("mc_samples must be >= 1".into()));
        }
        let noise: Vec<Vec<Vec<T>>> = batch
            .iter()
            .map(|_| {
                (0..mc_samples)
                    .map(|_| standard_normal_vec(rng, self.latent_dim))
                    .collect()
            })
            .collect();
        self.evaluate_elbo_with_noise(batch, &noise)
    }

    fn checkpoint_paths(dir: &Path, prefix: &str) -> (PathBuf, PathBuf, PathBuf) {
        (
            dir.join(format!("{prefix}_encoder.nnc")),
            dir.join(format!("{prefix}_decoder.nnc")),
            dir.join(format!("{prefix}.meta")),
        )
    }

    /// Writes encoder and decoder in the `NNC1` format plus a one-line JSON sidecar.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<(), VaeError> {
        let (enc, dec, meta) = Self::checkpoint_paths(dir, prefix);
        self.encoder.save(&enc)?;
        self.decoder.save(&dec)?;
        let line = serde_json::to_string(&VaeMeta {
            latent_dim: self.latent_dim,
            beta: self.beta.as_f64(),
            image_shape: self.image_shape,
        })
        .expect("metadata serializes");
        fs::write(meta, line + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self, VaeError> {
        let (enc, dec, meta) = Self::checkpoint_paths(dir, prefix);
        let meta: VaeMeta = serde_json::from_str(fs::read_to_string(meta)?.trim())
            .map_err(|e| VaeError::Config(format!("bad metadata: {e}")))?;
        let encoder = DenseNet::load(&enc, Activation::Relu, Activation::Identity)?;
        let decoder = DenseNet::load(&dec, Activation::Relu, Activation::Sigmoid)?;
        let model = Self::from_parts(encoder, decoder, T::c(meta.beta), meta.image_shape)?;
        if model.latent_dim != meta.latent_dim {
            return Err(VaeError::DimensionMismatch {
                expected: meta.latent_dim,
                got: model.latent_dim,
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_model(seed: u64, beta: f64) -> VaeModel<f64> {
        let cfg = VaeConfig {
            latent_dim: 3,
            beta,
            hidden: vec![5],
            ..VaeConfig::default()
        };
        VaeModel::new(&cfg, ImageShape::new(1, 2, 4), &mut rng(seed)).unwrap()
    }

    fn zero_model(pixels: usize, latent: usize) -> VaeModel<f64> {
        let enc = DenseNet::zeros(&[pixels, 4, 2 * latent], Activation::Relu, Activation::Identity).unwrap();
        let dec = DenseNet::zeros(&[latent, 4, pixels], Activation::Relu, Activation::Sigmoid).unwrap();
        VaeModel::from_parts(enc, dec, 1.0, ImageShape::new(1, 1, pixels)).unwrap()
    }

    #[test]
    fn zero_encoder_sits_at_prior() {
        let m = zero_model(6, 2);
        let p = m.encode(&[1.0, 0.0, 1.0, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(p.mean, vec![0.0; 2]);
        assert_eq!(p.log_variance, vec![0.0; 2]);
        assert!(m.encode(&[1.0]).is_err());
    }

    #[test]
    fn encode_matches_oracle_and_is_deterministic() {
        let m = small_model(3, 1.0);
        let x = [0.0, 1.0, 1.0, 0.0, 0.5, 0.25, 1.0, 0.0];
        let p = m.encode(&x).unwrap();
        assert_eq!(p, m.encode(&x).unwrap());
        // straight-line evaluation
        let e = &m.encoder;
        let mut h = vec![0.0; 5];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut s = e.bias(0, i);
            for j in 0..8 {
                s += e.weight(0, i, j) * x[j];
            }
            *hi = s.max(0.0);
        }
        for k in 0..6 {
            let mut s = e.bias(1, k);
            for i in 0..5 {
                s += e.weight(1, k, i) * h[i];
            }
            let got = if k < 3 { p.mean[k] } else { p.log_variance[k - 3] };
            assert!((got - s.clamp(-10.0, 10.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn reparameterize_closed_forms() {
        let post = GaussianPosterior {
            mean: vec![0.5, -1.0],
            log_variance: vec![0.3, -2.0],
        };
        assert_eq!(reparameterize(&post, &[0.0, 0.0]), post.mean);
        let unit = GaussianPosterior {
            mean: vec![0.5, -1.0],
            log_variance: vec![0.0, 0.0],
        };
        assert_eq!(reparameterize(&unit, &[1.5, 2.0]), vec![2.0, 1.0]);
        let two = GaussianPosterior {
            mean: vec![0.0; 3],
            log_variance: vec![2.0 * 2f64.ln(); 3],
        };
        for z in reparameterize(&two, &[1.0; 3]) {
            assert!((z - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let prior = GaussianPosterior {
            mean: vec![0.0; 4],
            log_variance: vec![0.0; 4],
        };
        assert_eq!(kl_to_unit_gaussian(&prior), 0.0);
        let shifted = GaussianPosterior {
            mean: vec![1.0, 1.0],
            log_variance: vec![0.0, 0.0],
        };
        assert!((kl_to_unit_gaussian(&shifted) - 1.0f64).abs() < 1e-15);
        let wide = GaussianPosterior {
            mean: vec![0.0],
            log_variance: vec![1.0],
        };
        let want = 0.5 * (std::f64::consts::E - 2.0);
        assert!((kl_to_unit_gaussian(&wide) - want).abs() < 1e-15);
        assert!((want - 0.3591).abs() < 1e-4);
    }

    #[test]
    fn recon_log_prob_closed_forms() {
        let eps = DECODER_EPS;
        let x = [1.0, 0.0, 1.0, 1.0, 0.0];
        let perfect: Vec<f64> = x.iter().map(|&v: &f64| v.clamp(eps, 1.0 - eps)).collect();
        let lp = recon_log_prob(&x, &perfect);
        assert!(lp <= 0.0 && lp.abs() <= x.len() as f64 * 2.0 * eps);
        let half = [0.5; 5];
        assert!((recon_log_prob(&x, &half) - 5.0 * 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(recon_log_prob(&[1.0], &[eps]), eps.ln());
    }

    #[test]
    fn degenerate_model_loss_is_d_log_2() {
        let m = zero_model(6, 2);
        let batch: Vec<&[f64]> = vec![&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], &[0.0; 6]];
        let (report, _) = m.beta_elbo_loss_and_grads(&batch, &mut rng(0)).unwrap();
        assert_eq!(report.kl_term, 0.0);
        assert!((report.neg_beta_elbo - 6.0 * 2f64.ln()).abs() < 1e-12);
        assert!(m.beta_elbo_loss_and_grads(&[], &mut rng(0)).is_err());
    }

    #[test]
    fn beta_scales_kl_contribution_exactly() {
        let m1 = small_model(5, 1.0);
        let mut m2 = m1.clone();
        m2.set_beta(2.0).unwrap();
        let x = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let batch: Vec<&[f64]> = vec![&x];
        let noise = vec![vec![0.3, -0.2, 1.1]];
        let (r1, _) = m1.loss_and_grads_with_noise(&batch, &noise).unwrap();
        let (r2, _) = m2.loss_and_grads_with_noise(&batch, &noise).unwrap();
        assert_eq!(r1.kl_term, r2.kl_term);
        assert!((r2.neg_beta_elbo - r1.neg_beta_elbo - r1.kl_term).abs() < 1e-12);
        assert_eq!(r2.neg_beta_elbo, 2.0 * r1.kl_term + r1.recon_nll);
        assert!(m2.set_beta(0.5).is_err());
    }

    fn loss_with_noise(m: &VaeModel<f64>, batch: &[&[f64]], noise: &[Vec<f64>]) -> f64 {
        m.loss_and_grads_with_noise(batch, noise).unwrap().0.neg_beta_elbo
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let m = small_model(9, 2.0);
        let a = [0.0, 1.0, 1.0, 0.0, 0.5, 0.25, 1.0, 0.0];
        let b = [1.0, 1.0, 0.0, 0.0, 0.0, 0.75, 0.0, 1.0];
        let batch: Vec<&[f64]> = vec![&a, &b];
        let noise = vec![vec![0.4, -1.2, 0.3], vec![-0.7, 0.1, 1.9]];
        let (_, grads) = m.loss_and_grads_with_noise(&batch, &noise).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (which, analytic) in [(0, grads.encoder.iter().copied().collect::<Vec<_>>()), (1, grads.decoder.iter().copied().collect())] {
            for (k, &an) in analytic.iter().enumerate() {
                let mut p = m.clone();
                let mut q = m.clone();
                {
                    let net = if which == 0 { &mut p.encoder } else { &mut p.decoder };
                    *net.params_mut().nth(k).unwrap() += h;
                    let net = if which == 0 { &mut q.encoder } else { &mut q.decoder };
                    *net.params_mut().nth(k).unwrap() -= h;
                }
                let num = (loss_with_noise(&p, &batch, &noise) - loss_with_noise(&q, &batch, &noise)) / (2.0 * h);
                let err = (an - num).abs() / an.abs().max(num.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "max rel error {worst}");
    }

    #[test]
    fn evaluation_with_one_draw_equals_loss_report() {
        let m = small_model(12, 1.0);
        let a = [0.0, 1.0, 1.0, 0.0, 0.5, 0.25, 1.0, 0.0];
        let batch: Vec<&[f64]> = vec![&a, &a];
        let noise = vec![vec![0.1, 0.2, 0.3], vec![-0.3, 0.0, 0.9]];
        let (train, _) = m.loss_and_grads_with_noise(&batch, &noise).unwrap();
        let eval_noise: Vec<Vec<Vec<f64>>> = noise.iter().map(|n| vec![n.clone()]).collect();
        let eval = m.evaluate_elbo_with_noise(&batch, &eval_noise).unwrap();
        assert!((train.neg_beta_elbo - eval.neg_beta_elbo).abs() < 1e-12);
        assert!((train.kl_term - eval.kl_term).abs() < 1e-12);
        assert!(eval.decomposition_error(1.0) < 1e-9);
    }

    #[test]
    fn evaluation_is_reproducible_and_pure() {
        let m = small_model(13, 5.0);
        let a = [0.0, 1.0, 1.0, 0.0, 0.5, 0.25, 1.0, 0.0];
        let batch: Vec<&[f64]> = vec![&a];
        let r1 = m.evaluate_elbo(&batch, 4, &mut rng(1)).unwrap();
        let r2 = m.evaluate_elbo(&batch, 4, &mut rng(1)).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.decomposition_error(5.0) < 1e-9);
        assert!(m.evaluate_elbo(&batch, 0, &mut rng(1)).is_err());
        assert!(m.evaluate_elbo(&[], 1, &mut rng(1)).is_err());
    }

    #[test]
    fn fit_memorizes_single_image() {
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: vec![16],
            ..VaeConfig::default()
        };
        let mut m = VaeModel::<f64>::new(&cfg, ImageShape::new(1, 4, 4), &mut rng(2)).unwrap();
        let img: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let data: Vec<&[f64]> = vec![&img];
        let mut opt = VaeOptimizer::new(&m, AdamConfig::with_learning_rate(1e-3));
        let hist = m.fit(&data, 2000, 4, &mut opt, &mut rng(3)).unwrap();
        assert_eq!(hist.len(), 2000);
        assert!(hist.last().unwrap().recon_nll < hist[0].recon_nll);
        assert!(m.fit(&[], 1, 1, &mut opt, &mut rng(3)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_model(21, 5.0);
        m.save(dir.path(), "vae").unwrap();
        let meta = fs::read_to_string(dir.path().join("vae.meta")).unwrap();
        assert_eq!(meta.lines().count(), 1);
        let back = VaeModel::<f64>::load(dir.path(), "vae").unwrap();
        assert_eq!(back, m);
    }
}
