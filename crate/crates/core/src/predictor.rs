//! Autoregressive listener-token predictor, joint training with the speaker
//! encoder, nucleus sampling and rollout.
//!
//! The predictor reads `[m′ ; listener embeddings]` (speaker steps first)
//! and emits logits at its first `1 + aux` output positions. Position 0 is
//! the next token; the others predict the tokens after it and only act as a
//! training regularizer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, concat_rows, warmup_rsqrt_lr, AdamState, Binder, Checkpoint, ParameterStore, Tape, Tensor};
use crate::data::{AudioFeatureSequence, DyadSample, MotionSequence};
use crate::error::{Error, Result};
use crate::fusion::{pool_audio, speaker_window, SpeakerEncoder, SpeakerEncoderConfig};
use crate::nn::{Embedding, LearnedPositions, Linear, Transformer, TransformerDims};
use crate::rng::{RngStreams, StreamRng};
use crate::vqvae::VqVae;

const CONFIG_KEY: &str = "listener.config";
const EPOCHS_KEY: &str = "listener.epochs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub codebook_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    /// Extra output positions supervised with the following tokens.
    pub aux_positions: usize,
    pub aux_weight: f32,
    /// Probability of hiding a random prefix of the past during training.
    pub mask_prob: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            codebook_size: 200,
            hidden: 200,
            heads: 10,
            layers: 5,
            ff_mult: 4,
            aux_positions: 3,
            aux_weight: 1.0,
            mask_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ListenerConfig {
    pub speaker: SpeakerEncoderConfig,
    pub predictor: PredictorConfig,
}

impl ListenerConfig {
    pub fn tokens(&self) -> usize {
        self.speaker.tokens
    }

    pub fn validate(&self) -> Result<()> {
        self.speaker.validate()?;
        let p = &self.predictor;
        if p.codebook_size == 0 {
            return Err(Error::Config("codebook size must be positive".into()));
        }
        if p.heads == 0 || p.hidden % p.heads != 0 {
            return Err(Error::Config(format!("predictor hidden {} not divisible by {} heads", p.hidden, p.heads)));
        }
        if 1 + p.aux_positions > self.speaker.output_steps() + self.tokens() {
            return Err(Error::Config(format!(
                "{} output positions exceed the {}-step predictor input",
                1 + p.aux_positions,
                self.speaker.output_steps() + self.tokens()
            )));
        }
        if !(0.0..=1.0).contains(&p.mask_prob) || p.aux_weight < 0.0 {
            return Err(Error::Config("mask probability must lie in [0, 1] and aux weight be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Predictor {
    speaker_in: Linear,
    embed: Embedding,
    segment: Embedding,
    pos: LearnedPositions,
    tf: Transformer,
    head: Linear,
}

/// Speaker encoder and predictor sharing one parameter store and optimizer.
#[derive(Debug, Clone)]
pub struct ListenerModel {
    pub config: ListenerConfig,
    pub store: ParameterStore,
    pub adam: AdamState,
    pub epochs_done: u64,
    pub speaker: SpeakerEncoder,
    predictor: Predictor,
}

impl ListenerModel {
    pub fn new(config: ListenerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(seed);
        let mut rng = RngStreams::new(seed).stream("listener-init");
        let speaker = SpeakerEncoder::new(&mut store, &mut rng, config.speaker.clone())?;
        let c = &config.predictor;
        let (s, r) = (&mut store, &mut rng);
        let h = c.hidden;
        let predictor = Predictor {
            speaker_in: Linear::new(s, r, "predictor.speaker_in", config.speaker.hidden, h)?,
            embed: Embedding::new(s, r, "predictor.token_embedding", c.codebook_size, h, 0.1)?,
            segment: Embedding::new(s, r, "predictor.segment", 2, h, 0.02)?,
            pos: LearnedPositions::new(s, r, "predictor.pos", config.speaker.output_steps() + config.tokens(), h)?,
            tf: Transformer::new(
                s,
                r,
                "predictor.tf",
                TransformerDims {
                    hidden: h,
                    heads: c.heads,
                    layers: c.layers,
                    ff_mult: c.ff_mult,
                },
                false,
            )?,
            head: Linear::small(s, r, "predictor.head", h, c.codebook_size, 1e-3)?,
        };
        Ok(Self {
            config,
            store,
            adam: AdamState::default(),
            epochs_done: 0,
            speaker,
            predictor,
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.config.predictor.codebook_size
    }

    fn check_past(&self, past: &[usize], visible: &[bool]) -> Result<()> {
        let tau = self.config.tokens();
        if past.len() != tau || visible.len() != tau {
            return Err(Error::shape("predict_dist", &[past.len(), visible.len()], &[tau, tau]));
        }
        let k = self.codebook_size();
        if let Some(&t) = past.iter().find(|&&t| t >= k) {
            return Err(Error::Range(format!("token {t} >= codebook size {k}")));
        }
        Ok(())
    }

    /// Logits `[1 + aux, K]` for one speaker window and listener history.
    /// `visible[j] == false` positions are fed as zeros and hidden from
    /// attention.
    pub fn logits(&self, p: &Binder, motion: &[f32], audio: &[f32], past: &[usize], visible: &[bool]) -> Result<Tensor> {
        self.check_past(past, visible)?;
        let sc = &self.config.speaker;
        let tape = p.tape();
        let m = tape.constant(&[sc.window_frames, sc.frame_dim()], motion.to_vec())?;
        let a = tape.constant(&[sc.window_frames, sc.audio_dim], audio.to_vec())?;
        let m_prime = self.speaker.encode(p, &m, &a)?;
        self.predictor_logits(p, &m_prime, past, visible)
    }

    fn predictor_logits(&self, p: &Binder, m_prime: &Tensor, past: &[usize], visible: &[bool]) -> Result<Tensor> {
        let pr = &self.predictor;
        let h = self.config.predictor.hidden;
        let tape = p.tape();
        let ts = m_prime.shape()[0];
        let tau = past.len();
        let speaker = pr.speaker_in.forward(p, m_prime)?.add(&pr.segment.forward(p, &vec![0; ts])?)?;
        let fed: Vec<usize> = past.iter().zip(visible).map(|(&t, &v)| if v { t } else { 0 }).collect();
        let gate: Vec<f32> = visible.iter().flat_map(|&v| std::iter::repeat_n(if v { 1.0 } else { 0.0 }, h)).collect();
        let listener = pr
            .embed
            .forward(p, &fed)?
            .mul(&tape.constant(&[tau, h], gate)?)?
            .add(&pr.segment.forward(p, &vec![1; tau])?)?;
        let x = pr.pos.add_to(p, &concat_rows(&[speaker, listener])?)?;
        let keys: Vec<bool> = std::iter::repeat_n(true, ts).chain(visible.iter().copied()).collect();
        let out = pr.tf.forward(p, &x, None, Some(&keys))?;
        pr.head.forward(p, &out.slice_rows(0, 1 + self.config.predictor.aux_positions)?)
    }

    /// Next-token distribution, normalized in f64.
    pub fn predict_dist(&self, motion: &[f32], audio: &[f32], past: &[usize], visible: &[bool]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = Binder::new(&tape, &self.store, false);
        let logits = self.logits(&p, motion, audio, past, visible)?;
        let k = self.codebook_size();
        Ok(softmax64(&logits.value()[..k]))
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
            .ok_or_else(|| Error::format(0, "checkpoint has no listener configuration"))?;
        let config: ListenerConfig =
            serde_json::from_str(raw).map_err(|e| Error::format(0, format!("bad listener configuration: {e}")))?;
        let mut model = Self::new(config, ckpt.store.rng_seed)?;
        model.store.load_values_from(&ckpt.store)?;
        model.store.step = ckpt.store.step;
        model.adam = ckpt.adam.clone().unwrap_or_default();
        model.epochs_done = ckpt
            .metadata
            .get(EPOCHS_KEY)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Ok(model)
    }
}

fn softmax64(logits: &[f32]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Lowest index among the largest entries.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One teacher-forced training case: a speaker window, the τ listener
/// tokens before the target, and the target plus auxiliary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorExample {
    pub motion: Vec<f32>,
    pub audio: Vec<f32>,
    pub past: Vec<usize>,
    /// False where the history runs before the start of the sequence.
    pub visible: Vec<bool>,
    pub targets: Vec<usize>,
}

/// History window ending before token `i`: tokens `i−τ..i`, hidden where
/// negative.
pub fn history(tokens: &[usize], i: usize, tau: usize) -> (Vec<usize>, Vec<bool>) {
    (0..tau)
        .map(|j| {
            let pos = i as isize - tau as isize + j as isize;
            if pos < 0 {
                (0, false)
            } else {
                (tokens[pos as usize], true)
            }
        })
        .unzip()
}

/// Examples at every `stride`-th token position of each sample whose
/// speaker window lies inside the recording. The window for token `i` ends
/// at frame `(i+1)·w`, so it includes the frames the target token covers.
pub fn build_examples(vq: &VqVae, config: &ListenerConfig, samples: &[DyadSample], stride: usize) -> Result<Vec<PredictorExample>> {
    if stride == 0 {
        return Err(Error::Config("example stride must be positive".into()));
    }
    let w = vq.window();
    let tau = config.tokens();
    let aux = config.predictor.aux_positions;
    let sc = &config.speaker;
    let mut out = Vec::new();
    for s in samples {
        if s.speaker_audio.feature_dim() != sc.audio_dim {
            return Err(Error::shape("build_examples audio", &[s.speaker_audio.feature_dim()], &[sc.audio_dim]));
        }
        let n_tok = s.len() / w;
        if n_tok <= aux {
            continue;
        }
        let tokens = vq.tokenize(&s.listener_motion.slice(0, n_tok * w)?)?;
        let pooled = pool_audio(&s.speaker_audio, s.len())?;
        let first = sc.window_frames.div_ceil(w).saturating_sub(1);
        for i in (first..n_tok - aux).step_by(stride) {
            let (motion, audio) = speaker_window(&s.speaker_motion, &pooled, sc.audio_dim, (i + 1) * w, sc.window_frames)?;
            let (past, visible) = history(&tokens, i, tau);
            out.push(PredictorExample {
                motion,
                audio,
                past,
                visible,
                targets: tokens[i..=i + aux].to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup: u64,
    pub seed: u64,
    /// Held-out evaluation period in epochs; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            peak_lr: 0.01,
            warmup: 4000,
            seed: 0,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorEpoch {
    pub epoch: u64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub held_out_accuracy: Option<f64>,
    pub held_out_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    /// Next-token cross-entropy on the training set before any update.
    pub initial_loss: f64,
    pub epochs: Vec<PredictorEpoch>,
    pub held_out_accuracy: Option<f64>,
    pub held_out_loss: Option<f64>,
}

/// Top-1 next-token accuracy and mean cross-entropy, with the true
/// history visible. `zero_speaker` replaces the speaker streams with zeros.
pub fn evaluate_predictor(model: &ListenerModel, examples: &[PredictorExample], zero_speaker: bool) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no examples to evaluate".into()));
    }
    let (mut hits, mut ce) = (0usize, 0.0f64);
    for ex in examples {
        let dist = if zero_speaker {
            model.predict_dist(&vec![0.0; ex.motion.len()], &vec![0.0; ex.audio.len()], &ex.past, &ex.visible)?
        } else {
            model.predict_dist(&ex.motion, &ex.audio, &ex.past, &ex.visible)?
        };
        let t = ex.targets[0];
        hits += usize::from(argmax(&dist) == t);
        ce -= dist[t].max(1e-300).ln();
    }
    let n = examples.len() as f64;
    Ok((hits as f64 / n, ce / n))
}

/// Joint training of speaker encoder and predictor against tokens from a
/// frozen VQ-VAE.
pub fn train_predictor(
    model: &mut ListenerModel,
    vq: &VqVae,
    train: &[PredictorExample],
    held_out: &[PredictorExample],
    config: &PredictorTrainConfig,
) -> Result<PredictorReport> {
    if !vq.is_frozen() {
        return Err(Error::contract("predictor training needs a frozen VQ-VAE"));
    }
    if vq.config.codebook_size != model.codebook_size() {
        return Err(Error::Config(format!(
            "VQ-VAE has K={} but the predictor expects K={}",
            vq.config.codebook_size,
            model.codebook_size()
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("predictor training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let aux = model.config.predictor.aux_positions;
    if let Some(ex) = train.iter().chain(held_out).find(|e| e.targets.len() != 1 + aux) {
        return Err(Error::shape("train_predictor targets", &[ex.targets.len()], &[1 + aux]));
    }
    let (_, initial_loss) = evaluate_predictor(model, train, false)?;
    let streams = RngStreams::new(config.seed);
    let tau = model.config.tokens();
    let weights: Vec<f32> = std::iter::once(1.0)
        .chain(std::iter::repeat_n(model.config.predictor.aux_weight, aux))
        .collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for n in 0..config.epochs {
        let epoch = model.epochs_done;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut streams.substream("predictor-shuffle", epoch));
        let mut mask_rng = streams.substream("predictor-mask", epoch);
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let p = Binder::new(&tape, &model.store, true);
            let mut total: Option<Tensor> = None;
            for &i in batch {
                let ex = &train[i];
                let mut visible = ex.visible.clone();
                if mask_rng.random_bool(model.config.predictor.mask_prob) {
                    let u = mask_rng.random_range(0..=tau);
                    visible[..u].iter_mut().for_each(|v| *v = false);
                }
                let logits = model.logits(&p, &ex.motion, &ex.audio, &ex.past, &visible)?;
                let row0 = logits.with_value(|v| v[..model.codebook_size()].iter().map(|&x| x as f64).collect::<Vec<_>>());
                hits += usize::from(argmax(&row0) == ex.targets[0]);
                let l = logits.cross_entropy(&ex.targets, Some(&weights))?;
                loss_sum += l.item() as f64;
                total = Some(match total {
                    Some(t) => t.add(&l)?,
                    None => l,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f32)?;
            if !loss.item().is_finite() {
                return Err(Error::Numerical(format!("non-finite predictor loss at epoch {epoch}")));
            }
            loss.backward()?;
            let grads = p.grads();
            drop(p);
            model.store.zero_fill_grads();
            for (name, g) in grads {
                model.store.accumulate_grad(&name, &g)?;
            }
            let lr = warmup_rsqrt_lr(model.adam.step + 1, config.peak_lr, config.warmup)?;
            adam_step(&mut model.store, &mut model.adam, lr as f32)?;
        }
        model.epochs_done += 1;
        let last = n + 1 == config.epochs;
        let eval = !held_out.is_empty() && (last || (config.eval_every > 0 && (n + 1) % config.eval_every == 0));
        let (held_out_accuracy, held_out_loss) = if eval {
            let (a, l) = evaluate_predictor(model, held_out, false)?;
            (Some(a), Some(l))
        } else {
            (None, None)
        };
        epochs.push(PredictorEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            held_out_accuracy,
            held_out_loss,
        });
    }
    let (held_out_accuracy, held_out_loss) = match epochs.last() {
        Some(e) => (e.held_out_accuracy, e.held_out_loss),
        None if !held_out.is_empty() => {
            let (a, l) = evaluate_predictor(model, held_out, false)?;
            (Some(a), Some(l))
        }
        None => (None, None),
    };
    Ok(PredictorReport {
        initial_loss,
        epochs,
        held_out_accuracy,
        held_out_loss,
    })
}

/// Smallest prefix of the probability-sorted indices holding mass ≥ `p`.
/// Equal probabilities keep index order.
pub fn nucleus_set(dist: &[f64], p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("nucleus p must lie in (0, 1], got {p}")));
    }
    if dist.is_empty() {
        return Err(Error::EmptyInput("empty distribution".into()));
    }
    if dist.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Numerical("distribution has negative or non-finite entries".into()));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).expect("finite").then(a.cmp(&b)));
    let total: f64 = dist.iter().sum();
    let mut mass = 0.0;
    let mut keep = Vec::new();
    for i in order {
        keep.push(i);
        mass += dist[i];
        if mass >= p * total {
            break;
        }
    }
    Ok(keep)
}

/// Draws from the renormalized nucleus.
pub fn nucleus_sample(dist: &[f64], p: f64, rng: &mut StreamRng) -> Result<usize> {
    let keep = nucleus_set(dist, p)?;
    let mass: f64 = keep.iter().map(|&i| dist[i]).sum();
    if mass <= 0.0 {
        return Ok(keep[0]);
    }
    let mut u = rng.random::<f64>() * mass;
    for &i in &keep {
        u -= dist[i];
        if u < 0.0 {
            return Ok(i);
        }
    }
    Ok(*keep.last().expect("non-empty nucleus"))
}

/// Generated tokens and their decoded motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub motion: MotionSequence,
}

/// Generates `steps` listener tokens for a speaker, starting from a fully
/// hidden history and feeding back its own samples. The speaker must cover
/// `steps · w` frames; window `i` ends at frame `(i+1)·w`.
pub fn rollout(
    model: &ListenerModel,
    vq: &VqVae,
    speaker_motion: &MotionSequence,
    speaker_audio: &AudioFeatureSequence,
    steps: usize,
    nucleus_p: f64,
    rng: &mut StreamRng,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::contract("rollout needs at least one step"));
    }
    let w = vq.window();
    if speaker_motion.len() < steps * w {
        return Err(Error::Range(format!(
            "{steps} steps need {} speaker frames, got {}",
            steps * w,
            speaker_motion.len()
        )));
    }
    let sc = &model.config.speaker;
    let tau = model.config.tokens();
    let pooled = pool_audio(speaker_audio, speaker_motion.len())?;
    let mut tokens = Vec::with_capacity(steps);
    for i in 0..steps {
        let (m, a) = speaker_window(speaker_motion, &pooled, sc.audio_dim, (i + 1) * w, sc.window_frames)?;
        let (past, visible) = history(&tokens, i, tau);
        let dist = model.predict_dist(&m, &a, &past, &visible)?;
        tokens.push(nucleus_sample(&dist, nucleus_p, rng)?);
    }
    let motion = vq.detokenize(&tokens)?;
    Ok(Rollout { tokens, motion })
}

/// Flattened Euclidean distance between two equal-shape motions.
fn sequence_l2(a: &MotionSequence, b: &MotionSequence) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Average over dyads of the minimum L2 to the true listener among the
/// first `x` rollouts, for `x = 1..=n_samples`. Rollouts are nested, so the
/// curve never increases.
pub fn multi_sample_min_l2(
    model: &ListenerModel,
    vq: &VqVae,
    dyads: &[DyadSample],
    steps: usize,
    n_samples: usize,
    nucleus_p: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be at least 1"));
    }
    if dyads.is_empty() {
        return Err(Error::EmptyInput("no dyads".into()));
    }
    let streams = RngStreams::new(seed);
    let frames = steps * vq.window();
    let mut curve = vec![0.0; n_samples];
    for (d, dyad) in dyads.iter().enumerate() {
        let gt = dyad.listener_motion.slice(0, frames)?;
        let mut best = f64::INFINITY;
        for (j, slot) in curve.iter_mut().enumerate() {
            let mut rng = streams.substream("multi-sample", ((d as u64) << 32) | j as u64);
            let r = rollout(model, vq, &dyad.speaker_motion, &dyad.speaker_audio, steps, nucleus_p, &mut rng)?;
            best = best.min(sequence_l2(&r.motion, &gt));
            *slot += best;
        }
    }
    let n = dyads.len() as f64;
    Ok(curve.into_iter().map(|v| v / n).collect())
}
