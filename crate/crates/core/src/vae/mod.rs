//! Convolutional variational autoencoder over fixed-length segments.
//!
//! The encoder is `q(z|x)`, a strided conv stack followed by two dense heads
//! producing the posterior mean and log-variance. The decoder is `p(x|z)`,
//! a dense projection followed by transposed convolutions back to the input
//! length with a linear output.

mod checkpoint;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointMeta, TensorEntry, CHECKPOINT_MAGIC,
};
pub use train::{train, train_with, EarlyStopping, EpochLosses, StopReason, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, conv_out_len, Conv1d, ConvTranspose1d, Dense, Param};
use crate::scalar::Scalar;

/// Bound applied to the log-variance head output.
pub const LOGVAR_LIMIT: f64 = 20.0;

/// One convolution (encoder) or transposed convolution (decoder) stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeArchitecture {
    pub input_len: usize,
    pub latent_dim: usize,
    pub encoder: Vec<ConvSpec>,
    pub decoder: Vec<ConvSpec>,
}

impl Default for VaeArchitecture {
    /// 1200 -> 600 -> 300 -> 60 (x32 channels) -> z(20) and back.
    fn default() -> Self {
        Self {
            input_len: 1200,
            latent_dim: 20,
            encoder: vec![
                ConvSpec::new(1, 8, 9, 2),
                ConvSpec::new(8, 16, 9, 2),
                ConvSpec::new(16, 32, 9, 5),
            ],
            decoder: vec![
                ConvSpec::new(32, 16, 9, 5),
                ConvSpec::new(16, 8, 9, 2),
                ConvSpec::new(8, 1, 9, 2),
            ],
        }
    }
}

impl VaeArchitecture {
    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }

    /// A miniature network for gradient checks: 32 samples, 4 latents.
    pub fn tiny() -> Self {
        Self {
            input_len: 32,
            latent_dim: 4,
            encoder: vec![ConvSpec::new(1, 2, 3, 2), ConvSpec::new(2, 3, 3, 2)],
            decoder: vec![ConvSpec::new(3, 2, 3, 2), ConvSpec::new(2, 1, 3, 2)],
        }
    }

    /// Lengths after each encoder stage.
    pub fn encoder_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.encoder
            .iter()
            .map(|c| {
                len = conv_out_len(len, c.stride);
                len
            })
            .collect()
    }

    pub fn bottleneck_len(&self) -> usize {
        self.encoder_lengths().last().copied().unwrap_or(self.input_len)
    }

    /// Width of the flattened encoder output.
    pub fn flat_dim(&self) -> usize {
        self.encoder.last().map_or(1, |c| c.out_ch) * self.bottleneck_len()
    }

    /// Width of the decoder's dense projection.
    pub fn decoder_flat_dim(&self) -> usize {
        self.decoder.first().map_or(1, |c| c.in_ch) * self.bottleneck_len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("invalid architecture: {m}")));
        if self.input_len == 0 || self.latent_dim == 0 {
            return bad("input_len and latent_dim must be positive".into());
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one stage".into());
        }
        if self.encoder[0].in_ch != 1 || self.decoder.last().unwrap().out_ch != 1 {
            return bad("network must map one channel to one channel".into());
        }
        for stages in [&self.encoder, &self.decoder] {
            for (i, c) in stages.iter().enumerate() {
                if c.kernel % 2 == 0 || c.stride == 0 || c.in_ch == 0 || c.out_ch == 0 {
                    return bad(format!("stage {i} {c:?} needs odd kernel and positive sizes"));
                }
                if i > 0 && stages[i - 1].out_ch != c.in_ch {
                    return bad(format!("stage {i} in_ch {} != previous out_ch {}", c.in_ch, stages[i - 1].out_ch));
                }
            }
        }
        let mut len = self.bottleneck_len();
        for c in &self.decoder {
            len *= c.stride;
        }
        if len != self.input_len {
            return bad(format!(
                "decoder produces {len} samples from a bottleneck of {}, expected {}",
                self.bottleneck_len(),
                self.input_len
            ));
        }
        Ok(())
    }
}

/// Posterior parameters and the sampled code for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// Network parameters plus the architecture that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    arch: VaeArchitecture,
    encoder: Vec<Conv1d<T>>,
    mu_head: Dense<T>,
    logvar_head: Dense<T>,
    projection: Dense<T>,
    decoder: Vec<ConvTranspose1d<T>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct ForwardCache<T> {
    enc_in: Vec<Vec<T>>,
    enc_cols: Vec<Vec<T>>,
    enc_pre: Vec<Vec<T>>,
    flat: Vec<T>,
    pub(crate) mu: Vec<T>,
    pub(crate) logvar: Vec<T>,
    noise: Vec<T>,
    z: Vec<T>,
    proj_pre: Vec<T>,
    dec_in: Vec<Vec<T>>,
    dec_cols: Vec<Vec<T>>,
    dec_pre: Vec<Vec<T>>,
    pub(crate) output: Vec<T>,
}

/// Scratch buffers for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct BackwardScratch<T> {
    g: Vec<T>,
    g_next: Vec<T>,
    cols: Vec<T>,
}

impl<T: Scalar> VaeModel<T> {
    /// Kaiming-uniform weights and zero biases drawn from `seed`.
    pub fn new(arch: VaeArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = arch
            .encoder
            .iter()
            .map(|c| Conv1d::new(c.in_ch, c.out_ch, c.kernel, c.stride, &mut rng))
            .collect();
        let mu_head = Dense::new(arch.flat_dim(), arch.latent_dim, &mut rng);
        let logvar_head = Dense::new(arch.flat_dim(), arch.latent_dim, &mut rng);
        let projection = Dense::new(arch.latent_dim, arch.decoder_flat_dim(), &mut rng);
        let decoder = arch
            .decoder
            .iter()
            .map(|c| ConvTranspose1d::new(c.in_ch, c.out_ch, c.kernel, c.stride, &mut rng))
            .collect();
        Ok(Self {
            arch,
            encoder,
            mu_head,
            logvar_head,
            projection,
            decoder,
        })
    }

    pub fn arch(&self) -> &VaeArchitecture {
        &self.arch
    }

    /// Parameter names in serialization order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        for head in ["mu_head", "logvar_head", "projection"] {
            names.push(format!("{head}.weight"));
            names.push(format!("{head}.bias"));
        }
        for i in 0..self.decoder.len() {
            names.push(format!("decoder.{i}.weight"));
            names.push(format!("decoder.{i}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for c in &self.encoder {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for d in [&self.mu_head, &self.logvar_head, &self.projection] {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        for c in &self.decoder {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for c in &mut self.encoder {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for d in [&mut self.mu_head, &mut self.logvar_head, &mut self.projection] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for c in &mut self.decoder {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Converts every parameter to another scalar type (moments reset).
    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        let mut out = VaeModel::<U>::new(self.arch.clone(), 0).expect("architecture already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        out
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.input_len {
            return Err(Error::shape(format!(
                "model expects {} samples, got {}",
                self.arch.input_len,
                x.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("model input contains NaN"));
        }
        Ok(())
    }

    /// Posterior mean and log-variance.
    pub fn encode(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let mut cache = ForwardCache::default();
        self.encode_cached(x, &mut cache);
        Ok((cache.mu, cache.logvar))
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::shape(format!(
                "decoder expects {} latents, got {}",
                self.arch.latent_dim,
                z.len()
            )));
        }
        let mut cache = ForwardCache {
            z: z.to_vec(),
            ..ForwardCache::default()
        };
        self.decode_cached(&mut cache);
        Ok(cache.output)
    }

    /// Full pass with `z = mu + exp(logvar / 2) * noise`.
    pub fn forward(&self, x: &[T], noise: &[T]) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        if noise.len() != self.arch.latent_dim {
            return Err(Error::shape(format!(
                "noise has {} entries, latent_dim is {}",
                noise.len(),
                self.arch.latent_dim
            )));
        }
        let mut cache = ForwardCache::default();
        self.forward_cached(x, noise, &mut cache);
        Ok(ForwardOutput {
            recon: cache.output,
            mu: cache.mu,
            logvar: cache.logvar,
            z: cache.z,
        })
    }

    /// Adds the gradient of the ELBO total for one segment into every
    /// `param.grad` and returns the loss terms.
    pub fn accumulate_gradients(&mut self, x_norm: &[T], noise: &[T]) -> Result<ElboTerms> {
        self.check_input(x_norm)?;
        if noise.len() != self.arch.latent_dim {
            return Err(Error::shape(format!(
                "noise has {} entries, latent_dim is {}",
                noise.len(),
                self.arch.latent_dim
            )));
        }
        let mut cache = ForwardCache::default();
        self.forward_cached(x_norm, noise, &mut cache);
        let terms = elbo_loss(x_norm, &cache.output, &cache.mu, &cache.logvar)?;
        let two = T::of(2.0);
        let grad: Vec<T> = cache.output.iter().zip(x_norm).map(|(&y, &t)| two * (y - t)).collect();
        self.backward(&cache, &grad, &mut BackwardScratch::default());
        Ok(terms)
    }

    fn encode_cached(&self, x: &[T], cache: &mut ForwardCache<T>) {
        let n = self.encoder.len();
        cache.enc_in.resize_with(n, Vec::new);
        cache.enc_cols.resize_with(n, Vec::new);
        cache.enc_pre.resize_with(n, Vec::new);
        let mut len = self.arch.input_len;
        for (i, conv) in self.encoder.iter().enumerate() {
            let mut input = std::mem::take(&mut cache.enc_in[i]);
            input.clear();
            if i == 0 {
                input.extend_from_slice(x);
            } else {
                input.extend_from_slice(&cache.enc_pre[i - 1]);
                nn::relu_inplace(&mut input);
            }
            let mut cols = std::mem::take(&mut cache.enc_cols[i]);
            let mut pre = std::mem::take(&mut cache.enc_pre[i]);
            conv.forward(&input, len, &mut cols, &mut pre);
            cache.enc_in[i] = input;
            cache.enc_cols[i] = cols;
            cache.enc_pre[i] = pre;
            len = conv_out_len(len, conv.stride);
        }
        cache.flat.clear();
        cache.flat.extend_from_slice(&cache.enc_pre[n - 1]);
        nn::relu_inplace(&mut cache.flat);
        self.mu_head.forward(&cache.flat, &mut cache.mu);
        self.logvar_head.forward(&cache.flat, &mut cache.logvar);
        // The clip keeps exp(logvar) finite on unnormalized inputs; backward
        // treats it as the identity so a saturated head is still pulled back.
        let limit = T::of(LOGVAR_LIMIT);
        cache.logvar.iter_mut().for_each(|v| *v = v.max(-limit).min(limit));
    }

    fn decode_cached(&self, cache: &mut ForwardCache<T>) {
        let n = self.decoder.len();
        self.projection.forward(&cache.z, &mut cache.proj_pre);
        cache.dec_in.resize_with(n, Vec::new);
        cache.dec_cols.resize_with(n, Vec::new);
        cache.dec_pre.resize_with(n, Vec::new);
        let mut len = self.arch.bottleneck_len();
        for (i, tconv) in self.decoder.iter().enumerate() {
            let mut input = std::mem::take(&mut cache.dec_in[i]);
            input.clear();
            input.extend_from_slice(if i == 0 { &cache.proj_pre } else { &cache.dec_pre[i - 1] });
            nn::relu_inplace(&mut input);
            let mut cols = std::mem::take(&mut cache.dec_cols[i]);
            let mut pre = std::mem::take(&mut cache.dec_pre[i]);
            tconv.forward(&input, len, &mut cols, &mut pre);
            cache.dec_in[i] = input;
            cache.dec_cols[i] = cols;
            cache.dec_pre[i] = pre;
            len *= tconv.stride;
        }
        cache.output.clear();
        cache.output.extend_from_slice(&cache.dec_pre[n - 1]);
    }

    pub(crate) fn forward_cached(&self, x: &[T], noise: &[T], cache: &mut ForwardCache<T>) {
        self.encode_cached(x, cache);
        cache.noise.clear();
        cache.noise.extend_from_slice(noise);
        cache.z = reparameterize(&cache.mu, &cache.logvar, noise);
        self.decode_cached(cache);
    }

    /// Accumulates parameter gradients of the ELBO objective given
    /// `d total / d recon` and the cached forward activations. The KL term's
    /// own gradient is added here.
    pub(crate) fn backward(&mut self, cache: &ForwardCache<T>, grad_recon: &[T], scratch: &mut BackwardScratch<T>) {
        let half = T::of(0.5);
        let nd = self.decoder.len();
        let dec_lengths: Vec<usize> = {
            let mut len = self.arch.bottleneck_len();
            self.decoder
                .iter()
                .map(|c| {
                    let l = len;
                    len *= c.stride;
                    l
                })
                .collect()
        };
        scratch.g.clear();
        scratch.g.extend_from_slice(grad_recon);
        for i in (0..nd).rev() {
            if i + 1 < nd {
                nn::relu_mask(&mut scratch.g, &cache.dec_pre[i]);
            }
            let in_len = dec_lengths[i];
            scratch.g_next.clear();
            scratch.g_next.resize(self.decoder[i].in_ch() * in_len, T::zero());
            self.decoder[i].backward(&scratch.g, &cache.dec_in[i], in_len, &mut scratch.cols, Some(&mut scratch.g_next));
            std::mem::swap(&mut scratch.g, &mut scratch.g_next);
        }
        nn::relu_mask(&mut scratch.g, &cache.proj_pre);
        let mut grad_z = vec![T::zero(); self.arch.latent_dim];
        self.projection.backward(&scratch.g, &cache.z, Some(&mut grad_z));

        // d/dmu and d/dlogvar of reconstruction (through z) plus the KL term.
        let mut grad_mu = Vec::with_capacity(grad_z.len());
        let mut grad_lv = Vec::with_capacity(grad_z.len());
        for j in 0..grad_z.len() {
            let sigma = (half * cache.logvar[j]).exp();
            grad_mu.push(grad_z[j] + cache.mu[j]);
            grad_lv.push(grad_z[j] * half * sigma * cache.noise[j] + half * (cache.logvar[j].exp() - T::one()));
        }
        let mut grad_flat = vec![T::zero(); cache.flat.len()];
        let mut tmp = vec![T::zero(); cache.flat.len()];
        self.mu_head.backward(&grad_mu, &cache.flat, Some(&mut grad_flat));
        self.logvar_head.backward(&grad_lv, &cache.flat, Some(&mut tmp));
        grad_flat.iter_mut().zip(&tmp).for_each(|(a, &b)| *a += b);

        let ne = self.encoder.len();
        scratch.g = grad_flat;
        let enc_lengths: Vec<usize> = {
            let mut len = self.arch.input_len;
            self.encoder
                .iter()
                .map(|c| {
                    let l = len;
                    len = conv_out_len(len, c.stride);
                    l
                })
                .collect()
        };
        for i in (0..ne).rev() {
            nn::relu_mask(&mut scratch.g, &cache.enc_pre[i]);
            let in_len = enc_lengths[i];
            if i == 0 {
                self.encoder[0].backward(&scratch.g, &cache.enc_cols[0], in_len, None);
            } else {
                scratch.g_next.clear();
                scratch.g_next.resize(self.encoder[i].in_ch() * in_len, T::zero());
                self.encoder[i].backward(&scratch.g, &cache.enc_cols[i], in_len, Some(&mut scratch.g_next));
                std::mem::swap(&mut scratch.g, &mut scratch.g_next);
            }
        }
    }
}

/// Result of [`VaeModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub recon: Vec<T>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub z: Vec<T>,
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize<T: Scalar>(mu: &[T], logvar: &[T], noise: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    mu.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

/// `-1/2 * sum(1 + logvar - mu^2 - exp(logvar))`, accumulated in f64.
pub fn kl_gaussian<T: Scalar>(mu: &[T], logvar: &[T]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            1.0 + lv - m * m - lv.exp()
        })
        .sum::<f64>()
}

/// Terms of the sum-accumulated negative ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl std::ops::AddAssign for ElboTerms {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.recon += o.recon;
        self.kl += o.kl;
    }
}

/// Squared-error sum plus KL, both in normalized space.
pub fn elbo_loss<T: Scalar>(x_norm: &[T], x_recon: &[T], mu: &[T], logvar: &[T]) -> Result<ElboTerms> {
    if x_norm.len() != x_recon.len() {
        return Err(Error::shape(format!(
            "input has {} samples, reconstruction {}",
            x_norm.len(),
            x_recon.len()
        )));
    }
    if mu.len() != logvar.len() {
        return Err(Error::shape("mu and logvar lengths differ"));
    }
    let recon = squared_error_sum(x_norm, x_recon);
    let kl = kl_gaussian(mu, logvar);
    Ok(ElboTerms {
        total: recon + kl,
        recon,
        kl,
    })
}

pub(crate) fn squared_error_sum<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn default_architecture_lengths() {
        let arch = VaeArchitecture::default();
        arch.validate().unwrap();
        assert_eq!(arch.encoder_lengths(), vec![600, 300, 60]);
        assert_eq!(arch.flat_dim(), 1920);
        assert_eq!(arch.decoder_flat_dim(), 1920);
        VaeArchitecture::tiny().validate().unwrap();
    }

    #[test]
    fn mismatched_decoder_is_rejected() {
        let mut arch = VaeArchitecture::default();
        arch.decoder[0].stride = 4;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn shapes_and_determinism() {
        let model = VaeModel::<f32>::new(VaeArchitecture::default(), 3).unwrap();
        let x: Vec<f32> = (0..1200).map(|i| (i as f32 * 0.05).sin()).collect();
        let (mu, lv) = model.encode(&x).unwrap();
        assert_eq!((mu.len(), lv.len()), (20, 20));
        let (mu2, lv2) = model.encode(&x).unwrap();
        assert_eq!((&mu, &lv), (&mu2, &lv2));
        let out = model.decode(&mu).unwrap();
        assert_eq!(out.len(), 1200);
        assert_eq!(out, model.decode(&mu).unwrap());
        assert!(model.encode(&x[..1199]).is_err());
        assert!(model.decode(&mu[..19]).is_err());
    }

    #[test]
    fn zeroed_heads_emit_their_biases() {
        let mut model = VaeModel::<f64>::new(VaeArchitecture::tiny(), 1).unwrap();
        model.mu_head.weight.value.fill(0.0);
        model.logvar_head.weight.value.fill(0.0);
        model.mu_head.bias.value.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        model.logvar_head.bias.value.data_mut().copy_from_slice(&[-1.0, 0.0, 1.0, 2.0]);
        let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let (mu, lv) = model.encode(&x).unwrap();
        assert_eq!(mu, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(lv, vec![-1.0, 0.0, 1.0, 2.0]);

        let last = model.decoder.last_mut().unwrap();
        last.weight.value.fill(0.0);
        last.bias.value.data_mut()[0] = 0.75;
        assert!(model.decode(&mu).unwrap().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = VaeModel::<f64>::new(VaeArchitecture::tiny(), 4).unwrap();
        // Lift biases off zero so every ReLU sees a generic operating point.
        for p in model.params_mut() {
            for v in p.value.data_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.zero_grad();
        model.accumulate_gradients(&x, &noise).unwrap();
        let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();

        let loss = |m: &VaeModel<f64>| {
            let out = m.forward(&x, &noise).unwrap();
            elbo_loss(&x, &out.recon, &out.mu, &out.logvar).unwrap().total
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for pi in 0..analytic.len() {
            for j in 0..analytic[pi].len() {
                let mut plus = model.clone();
                plus.params_mut()[pi].value.data_mut()[j] += h;
                let mut minus = model.clone();
                minus.params_mut()[pi].value.data_mut()[j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[pi][j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn reparameterize_examples() {
        let mu = [0.5f64, -1.0];
        assert_eq!(reparameterize(&mu, &[0.3, 0.7], &[0.0, 0.0]), mu.to_vec());
        assert_eq!(reparameterize(&mu, &[0.0, 0.0], &[1.0, 2.0]), vec![1.5, 1.0]);
        let z = reparameterize(&[0.0f64], &[2.0 * 3f64.ln()], &[1.0]);
        assert!((z[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(&[0.0f64; 7], &[0.0; 7]), 0.0);
        assert!((kl_gaussian(&[1.0f64; 20], &[0.0; 20]) - 10.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl_gaussian(&[0.0f64], &[1.0]) - (e - 2.0) / 2.0).abs() < 1e-12);
        assert!((kl_gaussian(&[0.0f64], &[1.0]) - 0.359141).abs() < 1e-6);
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let mu: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert!(kl_gaussian(&mu, &lv) >= 0.0);
        }
    }

    #[test]
    fn elbo_examples() {
        let x = vec![0.4f64; 1200];
        let t = elbo_loss(&x, &x, &[0.0; 20], &[0.0; 20]).unwrap();
        assert_eq!(t.total, 0.0);
        let off: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let t = elbo_loss(&x, &off, &[0.0; 20], &[0.0; 20]).unwrap();
        assert!((t.total - 12.0).abs() < 1e-9);
        let x2: Vec<f64> = x.iter().chain(&x).copied().collect();
        let off2: Vec<f64> = off.iter().chain(&off).copied().collect();
        let t2 = elbo_loss(&x2, &off2, &[0.0; 20], &[0.0; 20]).unwrap();
        assert!((t2.recon - 2.0 * t.recon).abs() < 1e-9);
        assert!(elbo_loss(&x, &x2, &[0.0; 20], &[0.0; 20]).is_err());
    }
}
