//! Convolutional variational autoencoder for document matrices.
//!
//! Encoder: per kernel width, valid convolutions running down the token
//! axis (each kernel spans all embedding columns), an activation, and max
//! pooling over positions, giving one feature per filter. The pooled vector
//! passes inverted dropout (training only) into two affine heads producing
//! `μ` and `log σ²`. A sample `z = μ + ε·σ` feeds a two-layer affine
//! decoder (ReLU hidden layer, linear output) that reconstructs the input.
//!
//! Loss per document: `KL(N(μ, σ²) ‖ N(0, I)) + ½‖x − x̂‖²`. The AE variant
//! uses `z = μ` and the reconstruction term alone.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD_ID;
use crate::error::{Error, Result};
use crate::io::{read_f32_le, read_json, write_f32_le, write_json};
use crate::matrix::Matrix;
use crate::scalar::{axpy, dot, Scalar};
use crate::twe::RowSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Vae,
    Ae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Tokens per document (padding length).
    pub input_rows: usize,
    /// Embedding width.
    pub input_cols: usize,
    pub kernel_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub activation: Activation,
    pub latent_dim: usize,
    /// Width of the decoder's hidden layer.
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Probability of keeping a pooled feature during training.
    pub dropout_keep: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads for per-document gradients. Results do not depend on
    /// this value.
    pub threads: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            input_rows: 100,
            input_cols: 128,
            kernel_widths: vec![3, 4, 5],
            filters_per_width: 42,
            activation: Activation::Relu,
            latent_dim: 128,
            hidden_dim: 256,
            learning_rate: 0.001,
            epochs: 30,
            dropout_keep: 0.5,
            batch_size: 32,
            seed: 1,
            threads: 1,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_rows == 0 || self.input_cols == 0 {
            return bad("input shape must be non-empty".into());
        }
        if self.kernel_widths.is_empty() || self.filters_per_width == 0 {
            return bad("at least one kernel width and one filter are required".into());
        }
        if let Some(&w) = self.kernel_widths.iter().find(|&&w| w == 0 || w > self.input_rows) {
            return bad(format!("kernel width {w} must be in 1..={}", self.input_rows));
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("latent_dim and hidden_dim must be at least 1".into());
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep {} not in (0, 1]", self.dropout_keep));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if self.batch_size == 0 || self.threads == 0 {
            return bad("batch_size and threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn num_filters(&self) -> usize {
        self.kernel_widths.len() * self.filters_per_width
    }

    fn input_len(&self) -> usize {
        self.input_rows * self.input_cols
    }
}

/// One named parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements.
    pub offset: usize,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Offsets {
    conv_w: Vec<usize>,
    conv_b: Vec<usize>,
    mu_w: usize,
    mu_b: usize,
    lv_w: usize,
    lv_b: usize,
    d1_w: usize,
    d1_b: usize,
    d2_w: usize,
    d2_b: usize,
}

fn layout(c: &VaeConfig) -> (Vec<TensorEntry>, Offsets) {
    let mut entries: Vec<TensorEntry> = Vec::new();
    let mut next = 0usize;
    let mut push = |name: String, shape: Vec<usize>| {
        let offset = next;
        next += shape.iter().product::<usize>();
        entries.push(TensorEntry { name, shape, offset });
        offset
    };
    let f = c.filters_per_width;
    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    for (i, &w) in c.kernel_widths.iter().enumerate() {
        conv_w.push(push(format!("conv{i}.weight"), vec![f, w, c.input_cols]));
        conv_b.push(push(format!("conv{i}.bias"), vec![f]));
    }
    let nf = c.num_filters();
    let mu_w = push("mu.weight".into(), vec![c.latent_dim, nf]);
    let mu_b = push("mu.bias".into(), vec![c.latent_dim]);
    let lv_w = push("logvar.weight".into(), vec![c.latent_dim, nf]);
    let lv_b = push("logvar.bias".into(), vec![c.latent_dim]);
    let d1_w = push("decoder.hidden.weight".into(), vec![c.hidden_dim, c.latent_dim]);
    let d1_b = push("decoder.hidden.bias".into(), vec![c.hidden_dim]);
    let d2_w = push("decoder.output.weight".into(), vec![c.input_len(), c.hidden_dim]);
    let d2_b = push("decoder.output.bias".into(), vec![c.input_len()]);
    (
        entries,
        Offsets {
            conv_w,
            conv_b,
            mu_w,
            mu_b,
            lv_w,
            lv_b,
            d1_w,
            d1_b,
            d2_w,
            d2_b,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    config: VaeConfig,
    variant: Variant,
    params: Vec<T>,
    manifest: Vec<TensorEntry>,
    off: Offsets,
}

impl<T: Scalar> VaeModel<T> {
    /// Uniform fan-in scaled initialization. Biases and the log-variance
    /// head start at zero, so every initial σ is 1.
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, variant: Variant, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (manifest, off) = layout(&config);
        let total = manifest.last().map_or(0, |e| e.offset + e.len());
        let mut params = vec![T::zero(); total];
        for e in &manifest {
            if e.name.ends_with(".bias") || e.name == "logvar.weight" {
                continue;
            }
            let fan_in: usize = e.shape[1..].iter().product();
            let fan_out = e.shape[0];
            let limit = if e.name.starts_with("conv") || e.name == "decoder.hidden.weight" {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            for p in &mut params[e.offset..e.offset + e.len()] {
                *p = T::of((rng.random::<f64>() * 2.0 - 1.0) * limit);
            }
        }
        Ok(Self {
            config,
            variant,
            params,
            manifest,
            off,
        })
    }

    pub fn from_params(config: VaeConfig, variant: Variant, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (manifest, off) = layout(&config);
        let total = manifest.last().map_or(0, |e| e.offset + e.len());
        if params.len() != total {
            return Err(Error::Shape(format!(
                "{} parameters supplied, configuration needs {total}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            variant,
            params,
            manifest,
            off,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn manifest(&self) -> &[TensorEntry] {
        &self.manifest
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.manifest
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.offset..e.offset + e.len()])
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        VaeModel {
            config: self.config.clone(),
            variant: self.variant,
            params: self.params.iter().map(|&p| U::of(p.as_f64())).collect(),
            manifest: self.manifest.clone(),
            off: self.off.clone(),
        }
    }

    /// Parameter blob at `path`, JSON config and manifest beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            format: crate::io::F32_LE.into(),
            variant: self.variant,
            config: self.config.clone(),
            tensors: self.manifest.clone(),
        };
        let mut w = crate::io::create(path)?;
        write_f32_le(&self.params, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        write_json(&crate::io::sidecar_path(path), &header)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header: CheckpointHeader = read_json(&crate::io::sidecar_path(path))?;
        if header.format != crate::io::F32_LE {
            return Err(Error::Format(format!(
                "unsupported parameter format {:?}",
                header.format
            )));
        }
        let (manifest, _) = layout(&header.config);
        if manifest != header.tensors {
            return Err(Error::Format("tensor manifest does not match the configuration".into()));
        }
        let total = manifest.last().map_or(0, |e| e.offset + e.len());
        let actual = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        if actual != total as u64 * 4 {
            return Err(Error::Format(format!(
                "parameter blob holds {actual} bytes, manifest implies {}",
                total * 4
            )));
        }
        let params = read_f32_le(crate::io::open(path)?, total).map_err(|e| Error::io(path, e))?;
        Self::from_params(header.config, header.variant, params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    variant: Variant,
    config: VaeConfig,
    tensors: Vec<TensorEntry>,
}

/// Random quantities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    /// Standard-normal draw, `latent_dim` long (ignored by the AE variant).
    pub eps: Vec<T>,
    /// Inverted-dropout multipliers per pooled feature (`0` or `1/keep`);
    /// `None` disables dropout.
    pub dropout: Option<Vec<T>>,
}

impl<T: Scalar> Noise<T> {
    pub fn none(latent_dim: usize) -> Self {
        Self {
            eps: vec![T::zero(); latent_dim],
            dropout: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(config: &VaeConfig, variant: Variant, mode: Mode, rng: &mut R) -> Self {
        let eps = match variant {
            Variant::Vae => (0..config.latent_dim)
                .map(|_| T::of(StandardNormal.sample(rng)))
                .collect(),
            Variant::Ae => vec![T::zero(); config.latent_dim],
        };
        let dropout = match mode {
            Mode::Train if config.dropout_keep < 1.0 => {
                Some(dropout_mask(config.num_filters(), config.dropout_keep, rng))
            }
            _ => None,
        };
        Self { eps, dropout }
    }
}

fn dropout_mask<T: Scalar, R: Rng + ?Sized>(n: usize, keep: f64, rng: &mut R) -> Vec<T> {
    let scale = T::of(1.0 / keep);
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect()
}

/// Everything computed by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// Activated convolution outputs, one vector per filter.
    pub features: Vec<Vec<T>>,
    /// Position of each filter's maximum (first on ties).
    pub argmax: Vec<usize>,
    /// Pre-activation value at each filter's argmax.
    pub pooled_pre: Vec<T>,
    /// Max-pooled features, one per filter.
    pub pooled: Vec<T>,
    /// Pooled features after dropout.
    pub dropped: Vec<T>,
    pub mask: Option<Vec<T>>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub sigma: Vec<T>,
    pub eps: Vec<T>,
    pub z: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub reconstruction: Vec<T>,
    pub kl: T,
    pub recon: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub kl: T,
    pub recon: T,
}

fn activate<T: Scalar>(a: Activation, x: T) -> T {
    match a {
        Activation::Relu => x.max(T::zero()),
        Activation::Identity => x,
    }
}

fn activation_grad<T: Scalar>(a: Activation, pre: T) -> T {
    match a {
        Activation::Relu if pre > T::zero() => T::one(),
        Activation::Relu => T::zero(),
        Activation::Identity => T::one(),
    }
}

fn check_input<T: Scalar>(x: &[T], config: &VaeConfig) -> Result<()> {
    if x.len() != config.input_len() {
        return Err(Error::Shape(format!(
            "input has {} values, model expects {}x{}",
            x.len(),
            config.input_rows,
            config.input_cols
        )));
    }
    Ok(())
}

/// Affine map `W x + b` with `W` stored row-major (out × in).
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    for (o, (y, &bias)) in out.iter_mut().zip(b).enumerate() {
        *y = dot(&w[o * n..(o + 1) * n], x) + bias;
    }
}

impl<T: Scalar> VaeModel<T> {
    fn encode_into(&self, x: &[T], trace: &mut ForwardTrace<T>) {
        let c = &self.config;
        let p = &self.params;
        let cols = c.input_cols;
        let nf = c.filters_per_width;
        for (wi, &width) in c.kernel_widths.iter().enumerate() {
            let span = width * cols;
            let positions = c.input_rows - width + 1;
            for f in 0..nf {
                let kernel = &p[self.off.conv_w[wi] + f * span..self.off.conv_w[wi] + (f + 1) * span];
                let bias = p[self.off.conv_b[wi] + f];
                let mut feats = Vec::with_capacity(positions);
                let mut best = 0usize;
                let mut best_pre = T::zero();
                for t in 0..positions {
                    let pre = dot(kernel, &x[t * cols..t * cols + span]) + bias;
                    let v = activate(c.activation, pre);
                    if t == 0 || v > feats[best] {
                        best = t;
                        best_pre = pre;
                    }
                    feats.push(v);
                }
                trace.pooled.push(feats[best]);
                trace.pooled_pre.push(best_pre);
                trace.argmax.push(best);
                trace.features.push(feats);
            }
        }
        trace.dropped = match &trace.mask {
            Some(m) => trace.pooled.iter().zip(m).map(|(&h, &k)| h * k).collect(),
            None => trace.pooled.clone(),
        };
        let nfil = c.num_filters();
        let l = c.latent_dim;
        trace.mu = vec![T::zero(); l];
        trace.logvar = vec![T::zero(); l];
        affine(
            &p[self.off.mu_w..self.off.mu_w + l * nfil],
            &p[self.off.mu_b..self.off.mu_b + l],
            &trace.dropped,
            &mut trace.mu,
        );
        affine(
            &p[self.off.lv_w..self.off.lv_w + l * nfil],
            &p[self.off.lv_b..self.off.lv_b + l],
            &trace.dropped,
            &mut trace.logvar,
        );
        let half = T::of(0.5);
        trace.sigma = trace.logvar.iter().map(|&lv| (half * lv).exp()).collect();
    }

    fn forward(&self, x: &[T], noise: &Noise<T>) -> Result<ForwardTrace<T>> {
        let c = &self.config;
        check_input(x, c)?;
        if noise.eps.len() != c.latent_dim {
            return Err(Error::Shape(format!(
                "eps has {} entries, latent_dim is {}",
                noise.eps.len(),
                c.latent_dim
            )));
        }
        if let Some(m) = &noise.dropout {
            if m.len() != c.num_filters() {
                return Err(Error::Shape(format!(
                    "dropout mask has {} entries for {} filters",
                    m.len(),
                    c.num_filters()
                )));
            }
        }
        let mut tr = ForwardTrace {
            features: Vec::with_capacity(c.num_filters()),
            argmax: Vec::with_capacity(c.num_filters()),
            pooled_pre: Vec::with_capacity(c.num_filters()),
            pooled: Vec::with_capacity(c.num_filters()),
            dropped: Vec::new(),
            mask: noise.dropout.clone(),
            mu: Vec::new(),
            logvar: Vec::new(),
            sigma: Vec::new(),
            eps: noise.eps.clone(),
            z: Vec::new(),
            hidden_pre: vec![T::zero(); c.hidden_dim],
            hidden: Vec::new(),
            reconstruction: vec![T::zero(); c.input_len()],
            kl: T::zero(),
            recon: T::zero(),
        };
        self.encode_into(x, &mut tr);
        match self.variant {
            Variant::Vae => {
                tr.z = reparameterize(&tr.mu, &tr.sigma, &tr.eps)?;
                tr.kl = kl_from_logvar(&tr.mu, &tr.logvar);
            }
            Variant::Ae => tr.z = tr.mu.clone(),
        }
        let p = &self.params;
        let (h, l) = (c.hidden_dim, c.latent_dim);
        affine(
            &p[self.off.d1_w..self.off.d1_w + h * l],
            &p[self.off.d1_b..self.off.d1_b + h],
            &tr.z,
            &mut tr.hidden_pre,
        );
        tr.hidden = tr.hidden_pre.iter().map(|&a| a.max(T::zero())).collect();
        let n = c.input_len();
        affine(
            &p[self.off.d2_w..self.off.d2_w + n * h],
            &p[self.off.d2_b..self.off.d2_b + n],
            &tr.hidden,
            &mut tr.reconstruction,
        );
        tr.recon = half_squared_error(x, &tr.reconstruction);
        Ok(tr)
    }

    /// Gradient of the loss with respect to every parameter, accumulated
    /// into `grad` (same layout as the parameters).
    fn backward_into(&self, x: &[T], tr: &ForwardTrace<T>, grad: &mut [T]) {
        let c = &self.config;
        let p = &self.params;
        let o = &self.off;
        let (h, l, nfil) = (c.hidden_dim, c.latent_dim, c.num_filters());

        // decoder output layer
        let d_out: Vec<T> = tr.reconstruction.iter().zip(x).map(|(&r, &xi)| r - xi).collect();
        let mut d_hidden = vec![T::zero(); h];
        for (i, &g) in d_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let row = &p[o.d2_w + i * h..o.d2_w + (i + 1) * h];
            axpy(g, row, &mut d_hidden);
            axpy(g, &tr.hidden, &mut grad[o.d2_w + i * h..o.d2_w + (i + 1) * h]);
            grad[o.d2_b + i] += g;
        }

        // decoder hidden layer
        let mut d_z = vec![T::zero(); l];
        for j in 0..h {
            if tr.hidden_pre[j] <= T::zero() {
                continue;
            }
            let g = d_hidden[j];
            axpy(g, &p[o.d1_w + j * l..o.d1_w + (j + 1) * l], &mut d_z);
            axpy(g, &tr.z, &mut grad[o.d1_w + j * l..o.d1_w + (j + 1) * l]);
            grad[o.d1_b + j] += g;
        }

        // reparameterization and KL
        let half = T::of(0.5);
        let (d_mu, d_lv): (Vec<T>, Vec<T>) = match self.variant {
            Variant::Vae => (0..l)
                .map(|i| {
                    let dmu = d_z[i] + tr.mu[i];
                    let dlv = d_z[i] * tr.eps[i] * half * tr.sigma[i] + half * (tr.logvar[i].exp() - T::one());
                    (dmu, dlv)
                })
                .unzip(),
            Variant::Ae => (d_z, vec![T::zero(); l]),
        };

        // heads
        let mut d_dropped = vec![T::zero(); nfil];
        for i in 0..l {
            axpy(d_mu[i], &p[o.mu_w + i * nfil..o.mu_w + (i + 1) * nfil], &mut d_dropped);
            axpy(
                d_mu[i],
                &tr.dropped,
                &mut grad[o.mu_w + i * nfil..o.mu_w + (i + 1) * nfil],
            );
            grad[o.mu_b + i] += d_mu[i];
            if self.variant == Variant::Vae {
                axpy(d_lv[i], &p[o.lv_w + i * nfil..o.lv_w + (i + 1) * nfil], &mut d_dropped);
                axpy(
                    d_lv[i],
                    &tr.dropped,
                    &mut grad[o.lv_w + i * nfil..o.lv_w + (i + 1) * nfil],
                );
                grad[o.lv_b + i] += d_lv[i];
            }
        }

        // dropout, pooling (argmax only) and convolution
        let cols = c.input_cols;
        let nf = c.filters_per_width;
        for (wi, &width) in c.kernel_widths.iter().enumerate() {
            let span = width * cols;
            for f in 0..nf {
                let idx = wi * nf + f;
                let mut g = d_dropped[idx];
                if let Some(m) = &tr.mask {
                    g *= m[idx];
                }
                g *= activation_grad(c.activation, tr.pooled_pre[idx]);
                if g == T::zero() {
                    continue;
                }
                let t = tr.argmax[idx];
                let start = o.conv_w[wi] + f * span;
                axpy(g, &x[t * cols..t * cols + span], &mut grad[start..start + span]);
                grad[o.conv_b[wi] + f] += g;
            }
        }
    }
}

/// Encoder pass. Train mode samples a dropout mask from `rng`; eval mode
/// applies no dropout and leaves `rng` untouched. Returns `(μ, σ, trace)`;
/// decoder fields of the trace are empty.
pub fn encoder_forward<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    model: &VaeModel<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>, ForwardTrace<T>)> {
    let c = &model.config;
    if x.shape() != (c.input_rows, c.input_cols) {
        return Err(Error::Shape(format!(
            "input is {:?}, model expects ({}, {})",
            x.shape(),
            c.input_rows,
            c.input_cols
        )));
    }
    let mask = match mode {
        Mode::Train if c.dropout_keep < 1.0 => Some(dropout_mask(c.num_filters(), c.dropout_keep, rng)),
        _ => None,
    };
    let mut tr = ForwardTrace {
        features: Vec::new(),
        argmax: Vec::new(),
        pooled_pre: Vec::new(),
        pooled: Vec::new(),
        dropped: Vec::new(),
        mask,
        mu: Vec::new(),
        logvar: Vec::new(),
        sigma: Vec::new(),
        eps: Vec::new(),
        z: Vec::new(),
        hidden_pre: Vec::new(),
        hidden: Vec::new(),
        reconstruction: Vec::new(),
        kl: T::zero(),
        recon: T::zero(),
    };
    model.encode_into(x.as_slice(), &mut tr);
    Ok((tr.mu.clone(), tr.sigma.clone(), tr))
}

/// `z = μ + ε·σ`, element-wise.
pub fn reparameterize<T: Scalar>(mu: &[T], sigma: &[T], eps: &[T]) -> Result<Vec<T>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "mu, sigma and eps have lengths {}, {}, {}",
            mu.len(),
            sigma.len(),
            eps.len()
        )));
    }
    Ok(mu.iter().zip(sigma).zip(eps).map(|((&m, &s), &e)| m + e * s).collect())
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)`.
pub fn kl_divergence<T: Scalar>(mu: &[T], sigma: &[T]) -> Result<T> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "mu has {} entries, sigma {}",
            mu.len(),
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > T::zero())) {
        return Err(Error::Domain(format!("sigma must be positive, got {s}")));
    }
    let half = T::of(0.5);
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let var = s * s;
            half * (m * m + var - T::one() - var.ln())
        })
        .sum())
}

/// KL term parameterized by `log σ²`, as the encoder head produces it.
pub fn kl_from_logvar<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    let half = T::of(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

fn half_squared_error<T: Scalar>(x: &[T], xhat: &[T]) -> T {
    let half = T::of(0.5);
    half * x.iter().zip(xhat).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>()
}

/// `½ Σ (x − x̂)²`.
pub fn reconstruction_loss<T: Scalar>(x: &[T], xhat: &[T]) -> Result<T> {
    if x.len() != xhat.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), xhat.len())));
    }
    Ok(half_squared_error(x, xhat))
}

/// Full forward pass with explicit noise.
pub fn forward<T: Scalar>(x: &Matrix<T>, model: &VaeModel<T>, noise: &Noise<T>) -> Result<ForwardTrace<T>> {
    model.forward(x.as_slice(), noise)
}

/// Loss parts for one document; `total = kl + recon`.
pub fn loss<T: Scalar>(x: &Matrix<T>, model: &VaeModel<T>, noise: &Noise<T>) -> Result<LossParts<T>> {
    let tr = model.forward(x.as_slice(), noise)?;
    let parts = LossParts {
        total: tr.kl + tr.recon,
        kl: tr.kl,
        recon: tr.recon,
    };
    if !parts.total.is_finite() {
        return Err(Error::NumericOverflow(format!("loss is {}", parts.total)));
    }
    Ok(parts)
}

/// Analytic gradients of [`loss`] for one document, laid out like
/// [`VaeModel::params`].
pub fn backward<T: Scalar>(x: &Matrix<T>, model: &VaeModel<T>, noise: &Noise<T>) -> Result<(LossParts<T>, Vec<T>)> {
    let tr = model.forward(x.as_slice(), noise)?;
    let mut grad = vec![T::zero(); model.params.len()];
    model.backward_into(x.as_slice(), &tr, &mut grad);
    Ok((
        LossParts {
            total: tr.kl + tr.recon,
            kl: tr.kl,
            recon: tr.recon,
        },
        grad,
    ))
}

/// A collection of equally shaped document matrices, materialized on demand.
pub trait MatrixSource<T>: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)` of every document.
    fn shape(&self) -> (usize, usize);

    /// Writes document `index` row-major into `out`.
    fn fill(&self, index: usize, out: &mut [T]) -> Result<()>;
}

impl<T: Scalar> MatrixSource<T> for Vec<Matrix<T>> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn shape(&self) -> (usize, usize) {
        self.first().map_or((0, 0), Matrix::shape)
    }

    fn fill(&self, index: usize, out: &mut [T]) -> Result<()> {
        let m = &self[index];
        if m.as_slice().len() != out.len() {
            return Err(Error::Shape(format!("document {index} has shape {:?}", m.shape())));
        }
        out.copy_from_slice(m.as_slice());
        Ok(())
    }
}

/// The documents of `source` at `indices`, in that order.
pub struct Subset<'a, T> {
    pub source: &'a dyn MatrixSource<T>,
    pub indices: &'a [usize],
}

impl<T: Scalar> MatrixSource<T> for Subset<'_, T> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn shape(&self) -> (usize, usize) {
        self.source.shape()
    }

    fn fill(&self, index: usize, out: &mut [T]) -> Result<()> {
        self.source.fill(self.indices[index], out)
    }
}

/// `1 / RMS` of the entries of every non-zero row across all documents,
/// or 1 when there are none. Used as the `scale` of a document source it
/// gives inputs of unit scale, matching the decoder's unit-variance
/// likelihood.
pub fn unit_rms_scale<T: Scalar>(docs: &dyn MatrixSource<T>) -> Result<T> {
    let (rows, cols) = docs.shape();
    let mut buf = vec![T::zero(); rows * cols];
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for i in 0..docs.len() {
        docs.fill(i, &mut buf)?;
        for row in buf.chunks_exact(cols) {
            if row.iter().any(|v| *v != T::zero()) {
                sum += row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                n += cols;
            }
        }
    }
    Ok(if n == 0 || sum == 0.0 {
        T::one()
    } else {
        T::of((n as f64 / sum).sqrt())
    })
}

/// Documents of word ids looked up in an embedding table, padded or
/// truncated to `pad_len` rows and multiplied by `scale`.
pub struct EmbeddedDocs<'a, T> {
    pub docs: &'a [Vec<u32>],
    pub table: &'a Matrix<T>,
    pub pad_len: usize,
    pub scale: T,
}

impl<T: Scalar> MatrixSource<T> for EmbeddedDocs<'_, T> {
    fn len(&self) -> usize {
        self.docs.len()
    }

    fn shape(&self) -> (usize, usize) {
        (self.pad_len, self.table.cols())
    }

    fn fill(&self, index: usize, out: &mut [T]) -> Result<()> {
        let cols = self.table.cols();
        out.iter_mut().for_each(|x| *x = T::zero());
        for (r, &w) in self.docs[index].iter().take(self.pad_len).enumerate() {
            if w == PAD_ID {
                continue;
            }
            if w as usize >= self.table.rows() {
                return Err(Error::Range(format!("word id {w} outside the embedding table")));
            }
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (o, &v) in dst.iter_mut().zip(self.table.row(w as usize)) {
                *o = v * self.scale;
            }
        }
        Ok(())
    }
}

/// Topic-tagged documents, rows built by a [`RowSource`] and multiplied
/// by `scale`.
pub struct TaggedDocs<'a, T> {
    pub docs: &'a [Vec<(u32, u32)>],
    pub source: RowSource<'a, T>,
    pub pad_len: usize,
    pub scale: T,
}

impl<T: Scalar> MatrixSource<T> for TaggedDocs<'_, T> {
    fn len(&self) -> usize {
        self.docs.len()
    }

    fn shape(&self) -> (usize, usize) {
        (self.pad_len, self.source.width())
    }

    fn fill(&self, index: usize, out: &mut [T]) -> Result<()> {
        let cols = self.source.width();
        out.iter_mut().for_each(|x| *x = T::zero());
        for (r, &(w, t)) in self.docs[index].iter().take(self.pad_len).enumerate() {
            if w != PAD_ID {
                let dst = &mut out[r * cols..(r + 1) * cols];
                self.source.fill_row(w, t, dst)?;
                dst.iter_mut().for_each(|v| *v *= self.scale);
            }
        }
        Ok(())
    }
}

/// Mean per-document losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub kl: f64,
    pub recon: f64,
    pub validation_total: Option<f64>,
}

/// CSV with header `epoch,total,kl,recon,validation_total`; the last field
/// is empty when no validation set was given.
pub fn write_training_log<W: Write>(log: &[EpochLog], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,total,kl,recon,validation_total")?;
    for e in log {
        let v = e.validation_total.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", e.epoch, e.total, e.kl, e.recon, v)?;
    }
    Ok(())
}

pub fn read_training_log<R: BufRead>(r: R) -> Result<Vec<EpochLog>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io("<training log>", e))?;
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::MalformedLine {
                line: i + 1,
                reason: format!("bad number {s:?}"),
            })
        };
        if f.len() != 5 {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: "expected 5 fields".into(),
            });
        }
        out.push(EpochLog {
            epoch: num(f[0])? as usize,
            total: num(f[1])?,
            kl: num(f[2])?,
            recon: num(f[3])?,
            validation_total: if f[4].is_empty() { None } else { Some(num(f[4])?) },
        });
    }
    Ok(out)
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr: T::of(lr),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
        self.step += 1;
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        if self.lr == T::zero() {
            return;
        }
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Documents per gradient chunk. Chunks are reduced in a fixed order so the
/// result does not depend on the thread count.
const CHUNK: usize = 8;

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

fn map_chunks<I, O, F>(pool: Option<&rayon::ThreadPool>, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&[I]) -> O + Sync + Send,
{
    match pool {
        Some(p) => p.install(|| items.par_chunks(CHUNK).map(&f).collect()),
        None => items.chunks(CHUNK).map(f).collect(),
    }
}

fn check_source<T: Scalar>(docs: &dyn MatrixSource<T>, config: &VaeConfig) -> Result<()> {
    if docs.shape() != (config.input_rows, config.input_cols) {
        return Err(Error::Shape(format!(
            "documents are {:?}, configuration expects ({}, {})",
            docs.shape(),
            config.input_rows,
            config.input_cols
        )));
    }
    Ok(())
}

/// Mean loss over `docs` in eval mode (no dropout), with ε drawn from a
/// generator seeded by `seed`.
pub fn evaluate_loss<T: Scalar>(model: &VaeModel<T>, docs: &dyn MatrixSource<T>, seed: u64) -> Result<LossParts<f64>> {
    check_source(docs, &model.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises: Vec<(usize, Noise<T>)> = (0..docs.len())
        .map(|i| (i, Noise::sample(&model.config, model.variant, Mode::Eval, &mut rng)))
        .collect();
    let pool = pool(model.config.threads)?;
    let chunks = map_chunks(pool.as_ref(), &noises, |chunk| -> Result<(f64, f64)> {
        let mut x = vec![T::zero(); model.config.input_len()];
        let mut acc = (0.0, 0.0);
        for (i, noise) in chunk {
            docs.fill(*i, &mut x)?;
            let tr = model.forward(&x, noise)?;
            acc.0 += tr.kl.as_f64();
            acc.1 += tr.recon.as_f64();
        }
        Ok(acc)
    });
    let (mut kl, mut recon) = (0.0, 0.0);
    for c in chunks {
        let (k, r) = c?;
        kl += k;
        recon += r;
    }
    let n = docs.len().max(1) as f64;
    Ok(LossParts {
        total: (kl + recon) / n,
        kl: kl / n,
        recon: recon / n,
    })
}

/// Minibatch Adam training. Each document gets one ε draw and one dropout
/// mask per step; the batch gradient is the mean of per-document gradients.
pub fn train<T: Scalar>(
    docs: &dyn MatrixSource<T>,
    validation: Option<&dyn MatrixSource<T>>,
    config: &VaeConfig,
    variant: Variant,
) -> Result<(VaeModel<T>, Vec<EpochLog>)> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_source(docs, config)?;
    if let Some(v) = validation {
        check_source(v, config)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VaeModel::new(config.clone(), variant, &mut rng)?;
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let pool = pool(config.threads)?;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut grad = vec![T::zero(); model.params.len()];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut kl_sum, mut recon_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let items: Vec<(usize, Noise<T>)> = batch
                .iter()
                .map(|&i| (i, Noise::sample(config, variant, Mode::Train, &mut rng)))
                .collect();
            let model_ref = &model;
            let partials = map_chunks(pool.as_ref(), &items, |chunk| -> Result<(Vec<T>, f64, f64)> {
                let mut g = vec![T::zero(); model_ref.params.len()];
                let mut x = vec![T::zero(); config.input_len()];
                let (mut kl, mut recon) = (0.0, 0.0);
                for (i, noise) in chunk {
                    docs.fill(*i, &mut x)?;
                    let tr = model_ref.forward(&x, noise)?;
                    model_ref.backward_into(&x, &tr, &mut g);
                    kl += tr.kl.as_f64();
                    recon += tr.recon.as_f64();
                }
                Ok((g, kl, recon))
            });
            grad.iter_mut().for_each(|g| *g = T::zero());
            for part in partials {
                let (g, kl, recon) = part?;
                axpy(T::one(), &g, &mut grad);
                kl_sum += kl;
                recon_sum += recon;
            }
            let scale = T::one() / T::of(batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= scale);
            if !kl_sum.is_finite() || !recon_sum.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: kl_sum + recon_sum,
                });
            }
            adam.update(&mut model.params, &grad);
        }
        let n = docs.len() as f64;
        let total = (kl_sum + recon_sum) / n;
        if !total.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, loss: total });
        }
        let validation_total = match validation {
            Some(v) if !v.is_empty() => {
                Some(evaluate_loss(&model, v, config.seed.wrapping_add(epoch as u64 + 1))?.total)
            }
            _ => None,
        };
        log.push(EpochLog {
            epoch,
            total,
            kl: kl_sum / n,
            recon: recon_sum / n,
            validation_total,
        });
    }
    Ok((model, log))
}

/// Eval-mode `μ` for every document, one row each.
pub fn encode_corpus<T: Scalar>(model: &VaeModel<T>, docs: &dyn MatrixSource<T>) -> Result<Matrix<T>> {
    check_source(docs, &model.config)?;
    let l = model.config.latent_dim;
    let ids: Vec<usize> = (0..docs.len()).collect();
    let pool = pool(model.config.threads)?;
    let chunks = map_chunks(pool.as_ref(), &ids, |chunk| -> Result<Vec<T>> {
        let mut x = vec![T::zero(); model.config.input_len()];
        let mut out = Vec::with_capacity(chunk.len() * l);
        let mut tr = ForwardTrace {
            features: Vec::new(),
            argmax: Vec::new(),
            pooled_pre: Vec::new(),
            pooled: Vec::new(),
            dropped: Vec::new(),
            mask: None,
            mu: Vec::new(),
            logvar: Vec::new(),
            sigma: Vec::new(),
            eps: Vec::new(),
            z: Vec::new(),
            hidden_pre: Vec::new(),
            hidden: Vec::new(),
            reconstruction: Vec::new(),
            kl: T::zero(),
            recon: T::zero(),
        };
        for &i in chunk {
            docs.fill(i, &mut x)?;
            tr.features.clear();
            tr.argmax.clear();
            tr.pooled_pre.clear();
            tr.pooled.clear();
            model.encode_into(&x, &mut tr);
            out.extend_from_slice(&tr.mu);
        }
        Ok(out)
    });
    let mut data = Vec::with_capacity(docs.len() * l);
    for c in chunks {
        data.extend(c?);
    }
    Matrix::from_vec(docs.len(), l, data)
}
