//! Sequence-encoding VQ-VAE over listener motion.
//!
//! The encoder maps `T` frames to `τ = T / w` latent steps, each snapped to
//! its nearest codebook row; the decoder maps `τ` codebook rows back to `T`
//! frames. Tokens are the codebook indices.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, noam_lr, AdamState, Binder, Checkpoint, Param, ParameterStore, Tape, Tensor};
use crate::data::{MotionSequence, ROTATION_DIM};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, LearnedPositions, Linear, Transformer, TransformerDims};
use crate::rng::RngStreams;

pub const CODEBOOK: &str = "vq.codebook";
const CONFIG_KEY: &str = "vqvae.config";
const EPOCHS_KEY: &str = "vqvae.epochs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqVaeConfig {
    pub expression_dim: usize,
    pub fps: f32,
    /// Conv+pool stages; the window is `2^downsample_layers` frames.
    pub downsample_layers: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Longest token sequence the learned positions cover. Longer motion is
    /// processed in chunks of this many tokens.
    pub max_tokens: usize,
    pub commit_weight: f32,
    /// Epochs of plain autoencoder training (quantizer bypassed) before the
    /// codebook is seeded from encoder outputs. Zero keeps the Gaussian init.
    pub warmup_epochs: usize,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            expression_dim: crate::data::DEFAULT_EXPRESSION_DIM,
            fps: crate::data::DEFAULT_FPS,
            downsample_layers: 3,
            conv_channels: 128,
            kernel: 5,
            hidden: 512,
            heads: 8,
            layers: 12,
            ff_mult: 4,
            codebook_size: 200,
            latent_dim: 256,
            max_tokens: 8,
            commit_weight: 0.25,
            warmup_epochs: 1,
        }
    }
}

impl VqVaeConfig {
    pub fn window(&self) -> usize {
        1 << self.downsample_layers
    }

    pub fn frame_dim(&self) -> usize {
        self.expression_dim + ROTATION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 {
            return Err(Error::Config("codebook size must be at least 1".into()));
        }
        if self.commit_weight < 0.0 {
            return Err(Error::Config("commit weight must be non-negative".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("conv kernel {} must be odd", self.kernel)));
        }
        for (what, v) in [
            ("expression_dim", self.expression_dim),
            ("conv_channels", self.conv_channels),
            ("hidden", self.hidden),
            ("latent_dim", self.latent_dim),
            ("max_tokens", self.max_tokens),
            ("ff_mult", self.ff_mult),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!("hidden {} not divisible by {} heads", self.hidden, self.heads)));
        }
        Ok(())
    }
}

/// Read-only view of a `K × d_z` codebook.
#[derive(Debug, Clone, Copy)]
pub struct Codebook<'a> {
    pub size: usize,
    pub dim: usize,
    pub data: &'a [f32],
}

impl<'a> Codebook<'a> {
    pub fn new(size: usize, dim: usize, data: &'a [f32]) -> Result<Self> {
        if size == 0 {
            return Err(Error::contract("empty codebook"));
        }
        if data.len() != size * dim {
            return Err(Error::shape("Codebook", &[size, dim], &[data.len()]));
        }
        Ok(Self { size, dim, data })
    }

    pub fn row(&self, k: usize) -> &'a [f32] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the nearest row by squared Euclidean distance; ties go to
    /// the lowest index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for k in 0..self.size {
            let d: f32 = self.row(k).iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Rows of `indices`, stacked.
    pub fn lookup(&self, indices: &[usize]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.size {
                return Err(Error::Range(format!("token {i} >= codebook size {}", self.size)));
            }
            out.extend_from_slice(self.row(i));
        }
        Ok(out)
    }
}

/// Snaps each `d_z`-row of `latent` to its nearest codebook row.
pub fn quantize(codebook: &Codebook, latent: &[f32]) -> Result<(Vec<f32>, Vec<usize>)> {
    let d = codebook.dim;
    if d == 0 || latent.len() % d != 0 {
        return Err(Error::shape("quantize", &[latent.len()], &[d]));
    }
    if latent.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite latent in quantize".into()));
    }
    let idx: Vec<usize> = latent.chunks(d).map(|row| codebook.nearest(row)).collect();
    Ok((codebook.lookup(&idx)?, idx))
}

/// The three loss terms, each a scalar tensor on the same tape.
pub struct VqLoss {
    pub total: Tensor,
    pub reconstruction: Tensor,
    pub codebook: Tensor,
    pub commitment: Tensor,
}

/// `‖x − x̂‖² + ‖sg[latent] − z_q‖² + β‖sg[z_q] − latent‖²`.
pub fn vq_loss(x: &Tensor, x_hat: &Tensor, latent: &Tensor, z_q: &Tensor, commit_weight: f32) -> Result<VqLoss> {
    if commit_weight < 0.0 {
        return Err(Error::contract(format!("negative commit weight {commit_weight}")));
    }
    let reconstruction = x.sub(x_hat)?.sum_squares()?;
    let codebook = latent.stop_gradient().sub(z_q)?.sum_squares()?;
    let commitment = z_q.stop_gradient().sub(latent)?.sum_squares()?;
    let total = reconstruction.add(&codebook)?.add(&commitment.scale(commit_weight)?)?;
    Ok(VqLoss {
        total,
        reconstruction,
        codebook,
        commitment,
    })
}

/// Tensors from one differentiable pass.
pub struct VqForward {
    pub latent: Tensor,
    pub z_q: Tensor,
    pub indices: Vec<usize>,
    pub reconstruction: Tensor,
}

#[derive(Debug, Clone)]
pub struct VqVae {
    pub config: VqVaeConfig,
    pub store: ParameterStore,
    pub adam: AdamState,
    /// Epochs trained so far; resumed runs continue the shuffle schedule.
    pub epochs_done: u64,
    enc_convs: Vec<Conv1d>,
    enc_in: Linear,
    enc_pos: LearnedPositions,
    enc_tf: Transformer,
    enc_out: Linear,
    dec_in: Linear,
    dec_pos: LearnedPositions,
    dec_tf: Transformer,
    dec_out: Linear,
    dec_convs: Vec<Conv1d>,
    dec_final: Linear,
}

impl VqVae {
    pub fn new(config: VqVaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParameterStore::new(seed);
        let mut rng = RngStreams::new(seed).stream("vqvae-init");
        let (s, r) = (&mut store, &mut rng);
        let pad = c.kernel / 2;
        let dims = TransformerDims {
            hidden: c.hidden,
            heads: c.heads,
            layers: c.layers,
            ff_mult: c.ff_mult,
        };
        let mut enc_convs = Vec::new();
        let mut c_in = c.frame_dim();
        for i in 0..c.downsample_layers {
            enc_convs.push(Conv1d::new(s, r, &format!("vq.enc.conv{i}"), c_in, c.conv_channels, c.kernel, 1, pad)?);
            c_in = c.conv_channels;
        }
        let enc_in = Linear::new(s, r, "vq.enc.in", c_in, c.hidden)?;
        let enc_pos = LearnedPositions::new(s, r, "vq.enc.pos", c.max_tokens, c.hidden)?;
        let enc_tf = Transformer::new(s, r, "vq.enc.tf", dims, false)?;
        let enc_out = Linear::new(s, r, "vq.enc.out", c.hidden, c.latent_dim)?;
        let dec_in = Linear::new(s, r, "vq.dec.in", c.latent_dim, c.hidden)?;
        let dec_pos = LearnedPositions::new(s, r, "vq.dec.pos", c.max_tokens, c.hidden)?;
        let dec_tf = Transformer::new(s, r, "vq.dec.tf", dims, false)?;
        let dec_out = Linear::new(s, r, "vq.dec.out", c.hidden, c_in)?;
        let dec_convs = (0..c.downsample_layers)
            .map(|i| Conv1d::new(s, r, &format!("vq.dec.conv{i}"), c_in, c_in, c.kernel, 1, pad))
            .collect::<Result<Vec<_>>>()?;
        let dec_final = Linear::new(s, r, "vq.dec.final", c_in, c.frame_dim())?;
        let cb = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..c.codebook_size * c.latent_dim).map(|_| cb.sample(r)).collect();
        store.insert(CODEBOOK, Param::new(&[c.codebook_size, c.latent_dim], data)?)?;
        Ok(Self {
            config,
            store,
            adam: AdamState::default(),
            epochs_done: 0,
            enc_convs,
            enc_in,
            enc_pos,
            enc_tf,
            enc_out,
            dec_in,
            dec_pos,
            dec_tf,
            dec_out,
            dec_convs,
            dec_final,
        })
    }

    pub fn window(&self) -> usize {
        self.config.window()
    }

    pub fn codebook(&self) -> Codebook<'_> {
        let p = self.store.get(CODEBOOK).expect("codebook is always present");
        Codebook {
            size: self.config.codebook_size,
            dim: self.config.latent_dim,
            data: &p.data,
        }
    }

    pub fn freeze(&mut self) {
        self.store.freeze();
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    fn check_frames(&self, frames: usize) -> Result<usize> {
        let w = self.window();
        if frames == 0 || frames % w != 0 {
            return Err(Error::shape("vqvae frames", &[frames], &[w]));
        }
        let tau = frames / w;
        if tau > self.config.max_tokens {
            return Err(Error::Range(format!(
                "{tau} tokens exceed the model's {} positions",
                self.config.max_tokens
            )));
        }
        Ok(tau)
    }

    /// `[T, d_m+3] → [T/w, d_z]` on the tape.
    pub fn encode_tensor(&self, p: &Binder, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.frame_dim() {
            return Err(Error::shape("vqvae encode", &shape, &[self.config.frame_dim()]));
        }
        self.check_frames(shape[0])?;
        let mut h = x.clone();
        for conv in &self.enc_convs {
            h = conv.forward(p, &h)?.relu()?.max_pool(2)?;
        }
        let h = self.enc_pos.add_to(p, &self.enc_in.forward(p, &h)?)?;
        let h = self.enc_tf.forward(p, &h, None, None)?;
        self.enc_out.forward(p, &h)
    }

    /// `[τ, d_z] → [τ·w, d_m+3]` on the tape.
    pub fn decode_tensor(&self, p: &Binder, z: &Tensor) -> Result<Tensor> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.config.latent_dim || shape[0] == 0 {
            return Err(Error::shape("vqvae decode", &shape, &[self.config.latent_dim]));
        }
        let h = self.dec_pos.add_to(p, &self.dec_in.forward(p, z)?)?;
        let h = self.dec_tf.forward(p, &h, None, None)?;
        let mut h = self.dec_out.forward(p, &h)?;
        for conv in &self.dec_convs {
            h = conv.forward(p, &h.repeat_rows(2)?)?.relu()?;
        }
        self.dec_final.forward(p, &h)
    }

    /// Encode, quantize with a straight-through estimator, decode.
    pub fn forward(&self, p: &Binder, x: &Tensor) -> Result<VqForward> {
        self.forward_with(p, x, true)
    }

    fn forward_with(&self, p: &Binder, x: &Tensor, quantized: bool) -> Result<VqForward> {
        let latent = self.encode_tensor(p, x)?;
        let (_, indices) = latent.with_value(|v| quantize(&self.codebook(), v))?;
        let z_q = p.get(CODEBOOK)?.embedding(&indices)?;
        let z_st = if quantized {
            latent.add(&z_q.sub(&latent)?.stop_gradient())?
        } else {
            latent.clone()
        };
        let reconstruction = self.decode_tensor(p, &z_st)?;
        Ok(VqForward {
            latent,
            z_q,
            indices,
            reconstruction,
        })
    }

    fn chunks(&self, frames: usize) -> Result<Vec<(usize, usize)>> {
        let w = self.window();
        if frames == 0 || frames % w != 0 {
            return Err(Error::shape("vqvae frames", &[frames], &[w]));
        }
        let span = self.config.max_tokens * w;
        Ok((0..frames).step_by(span).map(|s| (s, (s + span).min(frames))).collect())
    }

    /// Latent `[T/w, d_z]`, flat. Sequences longer than `max_tokens · w`
    /// are encoded chunk by chunk.
    pub fn encode(&self, motion: &MotionSequence) -> Result<Vec<f32>> {
        self.check_motion(motion)?;
        let mut out = Vec::new();
        for (s, e) in self.chunks(motion.len())? {
            let tape = Tape::new();
            let p = Binder::new(&tape, &self.store, false);
            let slice = &motion.as_slice()[s * motion.frame_dim()..e * motion.frame_dim()];
            let x = tape.constant(&[e - s, motion.frame_dim()], slice.to_vec())?;
            out.extend(self.encode_tensor(&p, &x)?.value());
        }
        Ok(out)
    }

    pub fn tokenize(&self, motion: &MotionSequence) -> Result<Vec<usize>> {
        Ok(quantize(&self.codebook(), &self.encode(motion)?)?.1)
    }

    /// Decodes `[τ, d_z]` rows; long inputs are decoded in chunks.
    pub fn decode(&self, z_q: &[f32]) -> Result<MotionSequence> {
        let d = self.config.latent_dim;
        if z_q.is_empty() || z_q.len() % d != 0 {
            return Err(Error::shape("vqvae decode", &[z_q.len()], &[d]));
        }
        let tau = z_q.len() / d;
        let mut out = Vec::with_capacity(tau * self.window() * self.config.frame_dim());
        for s in (0..tau).step_by(self.config.max_tokens) {
            let e = (s + self.config.max_tokens).min(tau);
            let tape = Tape::new();
            let p = Binder::new(&tape, &self.store, false);
            let z = tape.constant(&[e - s, d], z_q[s * d..e * d].to_vec())?;
            out.extend(self.decode_tensor(&p, &z)?.value());
        }
        MotionSequence::new(self.config.expression_dim, self.config.fps, out)
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<MotionSequence> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("no tokens to decode".into()));
        }
        self.decode(&self.codebook().lookup(tokens)?)
    }

    /// `decode(quantize(encode(x)))`.
    pub fn reconstruct(&self, motion: &MotionSequence) -> Result<MotionSequence> {
        self.detokenize(&self.tokenize(motion)?)
    }

    fn check_motion(&self, motion: &MotionSequence) -> Result<()> {
        if motion.expression_dim() != self.config.expression_dim {
            return Err(Error::shape(
                "vqvae motion",
                &[motion.expression_dim()],
                &[self.config.expression_dim],
            ));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut metadata = BTreeMap::new();
        metadata.insert(
            CONFIG_KEY.to_string(),
            serde_json::to_string(&self.config).map_err(|e| Error::contract(e.to_string()))?,
        );
        metadata.insert(EPOCHS_KEY.to_string(), self.epochs_done.to_string());
        Ok(Checkpoint {
            store: self.store.clone(),
            adam: Some(self.adam.clone()),
            metadata,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let raw = ckpt
            .metadata
            .get(CONFIG_KEY)
            .ok_or_else(|| Error::format(0, "checkpoint has no VQ-VAE configuration"))?;
        let config: VqVaeConfig =
            serde_json::from_str(raw).map_err(|e| Error::format(0, format!("bad VQ-VAE configuration: {e}")))?;
        let mut model = Self::new(config, ckpt.store.rng_seed)?;
        model.store.load_values_from(&ckpt.store)?;
        model.store.step = ckpt.store.step;
        if ckpt.store.is_frozen() {
            model.store.freeze();
        }
        model.adam = ckpt.adam.clone().unwrap_or_default();
        model.epochs_done = ckpt
            .metadata
            .get(EPOCHS_KEY)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            base_lr: 2.0,
            warmup: 4000,
            seed: 0,
        }
    }
}

/// Mean per-sequence loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqEpoch {
    pub epoch: u64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqTrainReport {
    pub epochs: Vec<VqEpoch>,
    /// Token counts over the training windows after the final epoch.
    pub usage: Vec<usize>,
    pub codes_used: usize,
    /// Mean per-sequence reconstruction L2 through the quantizer on the
    /// held-out windows, split into expression and rotation.
    pub held_out_expression_l2: Option<f64>,
    pub held_out_rotation_l2: Option<f64>,
}

/// Per-sequence L2 of `decode(quantize(encode(x)))` against `x`, averaged,
/// for expression and rotation channels.
pub fn quantization_l2(model: &VqVae, windows: &[MotionSequence]) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows".into()));
    }
    let (mut e_sum, mut r_sum) = (0.0, 0.0);
    for w in windows {
        let rec = model.reconstruct(w)?;
        let (mut e, mut r) = (0.0f64, 0.0f64);
        let d = w.expression_dim();
        for t in 0..w.len() {
            for (c, (a, b)) in w.row(t).iter().zip(rec.row(t)).enumerate() {
                let sq = ((a - b) as f64).powi(2);
                if c < d {
                    e += sq;
                } else {
                    r += sq;
                }
            }
        }
        e_sum += e.sqrt();
        r_sum += r.sqrt();
    }
    let n = windows.len() as f64;
    Ok((e_sum / n, r_sum / n))
}

fn seed_codebook(model: &mut VqVae, windows: &[MotionSequence], seed: u64) -> Result<()> {
    let mut latents: Vec<Vec<f32>> = Vec::new();
    for w in windows {
        let z = model.encode(w)?;
        latents.extend(z.chunks(model.config.latent_dim).map(|c| c.to_vec()));
    }
    let mut rng = RngStreams::new(seed).stream("vqvae-codebook-init");
    let jitter = Normal::new(0.0, 1e-2).expect("finite std");
    latents.shuffle(&mut rng);
    let k = model.config.codebook_size;
    let cb = &mut model.store.get_mut(CODEBOOK).expect("codebook").data;
    for (i, row) in cb.chunks_mut(model.config.latent_dim).enumerate().take(k) {
        let src = &latents[i % latents.len()];
        for (dst, &v) in row.iter_mut().zip(src) {
            *dst = v + jitter.sample(&mut rng);
        }
    }
    Ok(())
}

/// Trains on fixed-length windows for `config.epochs` further epochs.
pub fn train_vqvae(
    model: &mut VqVae,
    train: &[MotionSequence],
    held_out: &[MotionSequence],
    config: &VqTrainConfig,
) -> Result<VqTrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyInput("VQ-VAE training set is empty".into()));
    }
    if model.is_frozen() {
        return Err(Error::contract("cannot train a frozen VQ-VAE"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for w in train.iter().chain(held_out) {
        model.check_motion(w)?;
        model.check_frames(w.len())?;
    }
    let streams = RngStreams::new(config.seed);
    let warmup = model.config.warmup_epochs as u64;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = model.epochs_done;
        if warmup > 0 && epoch == warmup {
            seed_codebook(model, train, config.seed)?;
        }
        let quantized = epoch >= warmup;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut streams.substream("vqvae-shuffle", epoch));
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let p = Binder::new(&tape, &model.store, true);
            let mut total: Option<Tensor> = None;
            for &i in batch {
                let w = &train[i];
                let x = tape.constant(&[w.len(), w.frame_dim()], w.as_slice().to_vec())?;
                let f = model.forward_with(&p, &x, quantized)?;
                let l = if quantized {
                    vq_loss(&x, &f.reconstruction, &f.latent, &f.z_q, model.config.commit_weight)?
                } else {
                    let r = x.sub(&f.reconstruction)?.sum_squares()?;
                    let zero = tape.zeros(&[]);
                    VqLoss {
                        total: r.clone(),
                        reconstruction: r,
                        codebook: zero.clone(),
                        commitment: zero,
                    }
                };
                sums[0] += l.reconstruction.item() as f64;
                sums[1] += l.codebook.item() as f64;
                sums[2] += l.commitment.item() as f64;
                sums[3] += l.total.item() as f64;
                total = Some(match total {
                    Some(t) => t.add(&l.total)?,
                    None => l.total,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f32)?;
            if !loss.item().is_finite() {
                return Err(Error::Numerical(format!("non-finite VQ-VAE loss at epoch {epoch}")));
            }
            loss.backward()?;
            let grads = p.grads();
            drop(p);
            model.store.zero_fill_grads();
            for (name, g) in grads {
                model.store.accumulate_grad(&name, &g)?;
            }
            let lr = noam_lr(model.adam.step + 1, config.base_lr, config.warmup, model.config.hidden)?;
            adam_step(&mut model.store, &mut model.adam, lr as f32)?;
        }
        let n = train.len() as f64;
        epochs.push(VqEpoch {
            epoch,
            reconstruction: sums[0] / n,
            codebook: sums[1] / n,
            commitment: sums[2] / n,
            total: sums[3] / n,
        });
        model.epochs_done += 1;
    }
    let mut usage = vec![0usize; model.config.codebook_size];
    for w in train {
        for t in model.tokenize(w)? {
            usage[t] += 1;
        }
    }
    let (held_out_expression_l2, held_out_rotation_l2) = if held_out.is_empty() {
        (None, None)
    } else {
        let (e, r) = quantization_l2(model, held_out)?;
        (Some(e), Some(r))
    };
    Ok(VqTrainReport {
        epochs,
        codes_used: usage.iter().filter(|&&c| c > 0).count(),
        usage,
        held_out_expression_l2,
        held_out_rotation_l2,
    })
}
