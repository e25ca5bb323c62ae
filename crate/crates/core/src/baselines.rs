//! Non-learned comparison methods over a bank of training windows.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{windows, AudioFeatureSequence, DyadSample, MotionSequence};
use crate::error::{Error, Result};
use crate::vqvae::VqVae;

pub const BANK_WINDOW: usize = 64;
pub const DEFAULT_SMOOTH_RADIUS: usize = 3;
pub const DEFAULT_DELAY: usize = 17;

/// Training windows with flattened search keys.
#[derive(Debug, Clone)]
pub struct TrainBank {
    window: usize,
    entries: Vec<DyadSample>,
    motion_keys: Vec<Vec<f32>>,
    audio_keys: Vec<Vec<f64>>,
}

/// Mean and standard deviation of every audio feature bin.
pub fn audio_statistics(audio: &AudioFeatureSequence) -> Vec<f64> {
    let d = audio.feature_dim();
    let n = audio.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for i in 0..audio.len() {
        for (m, &v) in mean.iter_mut().zip(audio.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for i in 0..audio.len() {
        for ((s, &v), m) in var.iter_mut().zip(audio.row(i)).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    mean.extend(var.into_iter().map(|s| (s / n).sqrt()));
    mean
}

impl TrainBank {
    /// Bank over already-cut windows, which must all have the same length.
    pub fn new(entries: Vec<DyadSample>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::EmptyInput("train bank without windows".into()))?;
        let window = first.len();
        if let Some(bad) = entries.iter().find(|e| e.len() != window) {
            return Err(Error::shape("TrainBank", &[window], &[bad.len()]));
        }
        let motion_keys = entries.iter().map(|e| e.speaker_motion.as_slice().to_vec()).collect();
        let audio_keys = entries.iter().map(|e| audio_statistics(&e.speaker_audio)).collect();
        Ok(Self {
            window,
            entries,
            motion_keys,
            audio_keys,
        })
    }

    /// Every `window`-frame window of every sample at multiples of `stride`.
    pub fn from_samples(samples: &[DyadSample], window: usize, stride: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for s in samples {
            entries.extend(windows(s, window, stride)?);
        }
        Self::new(entries)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DyadSample] {
        &self.entries
    }

    pub fn listener(&self, i: usize) -> &MotionSequence {
        &self.entries[i].listener_motion
    }

    fn frame_count(&self) -> usize {
        self.entries.len() * self.window
    }

    fn frame(&self, i: usize) -> &[f32] {
        self.entries[i / self.window].listener_motion.row(i % self.window)
    }
}

fn nearest<K, Q: ?Sized>(keys: &[K], query: &Q, dist: impl Fn(&K, &Q) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, k) in keys.iter().enumerate() {
        let d = dist(k, query);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Listener paired with the bank speaker window closest in flattened L2;
/// ties go to the lower index.
pub fn nn_motion(bank: &TrainBank, speaker: &MotionSequence) -> Result<MotionSequence> {
    let key = bank.motion_keys.first().ok_or_else(|| Error::EmptyInput("empty train bank".into()))?;
    if speaker.as_slice().len() != key.len() {
        return Err(Error::shape("nn_motion", &[speaker.len(), speaker.frame_dim()], &[bank.window]));
    }
    let i = nearest(&bank.motion_keys, speaker.as_slice(), |k, q| {
        k.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum()
    });
    Ok(bank.listener(i).clone())
}

/// Listener paired with the bank speaker whose per-bin audio mean and
/// standard deviation are closest to the query's.
pub fn nn_audio(bank: &TrainBank, audio: &AudioFeatureSequence) -> Result<MotionSequence> {
    let key = bank.audio_keys.first().ok_or_else(|| Error::EmptyInput("empty train bank".into()))?;
    let q = audio_statistics(audio);
    if q.len() != key.len() {
        return Err(Error::shape("nn_audio", &[audio.feature_dim()], &[key.len() / 2]));
    }
    let i = nearest(&bank.audio_keys, q.as_slice(), |k, q| k.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum());
    Ok(bank.listener(i).clone())
}

pub fn random_baseline(bank: &TrainBank, rng: &mut impl Rng) -> Result<MotionSequence> {
    if bank.is_empty() {
        return Err(Error::EmptyInput("empty train bank".into()));
    }
    Ok(bank.listener(rng.random_range(0..bank.len())).clone())
}

/// Per-coordinate median of all bank listener frames, repeated for a full
/// window. Even counts average the two middle values.
pub fn median_baseline(bank: &TrainBank) -> Result<MotionSequence> {
    let first = bank.entries.first().ok_or_else(|| Error::EmptyInput("empty train bank".into()))?;
    let proto = &first.listener_motion;
    let dim = proto.frame_dim();
    let n = bank.frame_count();
    let mut column = vec![0f32; n];
    let mut median = vec![0f32; dim];
    for (c, m) in median.iter_mut().enumerate() {
        for (i, v) in column.iter_mut().enumerate() {
            *v = bank.frame(i)[c];
        }
        column.sort_by(f32::total_cmp);
        *m = if n % 2 == 1 {
            column[n / 2]
        } else {
            ((column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0) as f32
        };
    }
    MotionSequence::new(proto.expression_dim(), proto.fps(), median.repeat(bank.window))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Centered moving average of radius `radius` with reflective edges.
pub fn mirror(speaker: &MotionSequence, radius: usize) -> Result<MotionSequence> {
    if speaker.is_empty() {
        return Err(Error::EmptyInput("mirror of an empty sequence".into()));
    }
    if radius == 0 {
        return Ok(speaker.clone());
    }
    let n = speaker.len();
    let dim = speaker.frame_dim();
    let span = (2 * radius + 1) as f64;
    let mut out = vec![0f32; n * dim];
    for t in 0..n {
        for c in 0..dim {
            let s: f64 = (-(radius as isize)..=radius as isize)
                .map(|o| speaker.row(reflect(t as isize + o, n))[c] as f64)
                .sum();
            out[t * dim + c] = (s / span) as f32;
        }
    }
    MotionSequence::new(speaker.expression_dim(), speaker.fps(), out)
}

/// Mirror shifted right by `delay` frames; the gap holds the first smoothed
/// frame.
pub fn delayed_mirror(speaker: &MotionSequence, delay: usize, radius: usize) -> Result<MotionSequence> {
    let m = mirror(speaker, radius)?;
    if delay == 0 {
        return Ok(m);
    }
    let n = m.len();
    let mut out = Vec::with_capacity(m.as_slice().len());
    for t in 0..n {
        out.extend_from_slice(m.row(t.saturating_sub(delay)));
    }
    MotionSequence::new(m.expression_dim(), m.fps(), out)
}

/// A window whose frames are drawn independently from all bank frames.
pub fn random_expression(bank: &TrainBank, rng: &mut impl Rng) -> Result<MotionSequence> {
    let first = bank.entries.first().ok_or_else(|| Error::EmptyInput("empty train bank".into()))?;
    let n = bank.frame_count();
    let mut out = Vec::with_capacity(bank.window * first.listener_motion.frame_dim());
    for _ in 0..bank.window {
        out.extend_from_slice(bank.frame(rng.random_range(0..n)));
    }
    MotionSequence::new(first.listener_motion.expression_dim(), first.listener_motion.fps(), out)
}

/// Uniformly random tokens decoded by a frozen VQ-VAE.
pub fn codebook_random_walk(vq: &VqVae, steps: usize, rng: &mut impl Rng) -> Result<(Vec<usize>, MotionSequence)> {
    if !vq.is_frozen() {
        return Err(Error::contract("random walk needs a frozen VQ-VAE"));
    }
    if steps == 0 {
        return Err(Error::contract("random walk needs at least one step"));
    }
    let k = vq.config.codebook_size;
    let tokens: Vec<usize> = (0..steps).map(|_| rng.random_range(0..k)).collect();
    let motion = vq.detokenize(&tokens)?;
    Ok((tokens, motion))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    NnMotion,
    NnAudio,
    Random,
    Median,
    Mirror,
    DelayedMirror,
    RandomExpression,
    RandomWalk,
}

impl Baseline {
    pub const ALL: [Baseline; 8] = [
        Self::NnMotion,
        Self::NnAudio,
        Self::Random,
        Self::Median,
        Self::Mirror,
        Self::DelayedMirror,
        Self::RandomExpression,
        Self::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NnMotion => "nn-motion",
            Self::NnAudio => "nn-audio",
            Self::Random => "random",
            Self::Median => "median",
            Self::Mirror => "mirror",
            Self::DelayedMirror => "delayed-mirror",
            Self::RandomExpression => "random-expression",
            Self::RandomWalk => "random-walk",
        }
    }

    pub fn needs_vqvae(self) -> bool {
        self == Self::RandomWalk
    }

    /// Caveat printed alongside this method's results.
    pub fn note(self) -> Option<&'static str> {
        match self {
            Self::NnAudio => Some("audio neighbours use per-bin mel mean and std, not learned audio embeddings"),
            _ => None,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|b| b.name()).collect();
            Error::Config(format!("unknown method '{s}', expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineParams {
    pub smooth_radius: usize,
    pub delay: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            smooth_radius: DEFAULT_SMOOTH_RADIUS,
            delay: DEFAULT_DELAY,
        }
    }
}

/// Runs one baseline for one query window. Bank-based methods need the
/// query to match the bank window length; the random walk covers
/// `len / w` steps.
pub fn run_baseline(
    method: Baseline,
    bank: &TrainBank,
    query: &DyadSample,
    vq: Option<&VqVae>,
    params: BaselineParams,
    rng: &mut impl Rng,
) -> Result<MotionSequence> {
    match method {
        Baseline::NnMotion => nn_motion(bank, &query.speaker_motion),
        Baseline::NnAudio => nn_audio(bank, &query.speaker_audio),
        Baseline::Random => random_baseline(bank, rng),
        Baseline::Median => median_baseline(bank),
        Baseline::Mirror => mirror(&query.speaker_motion, params.smooth_radius),
        Baseline::DelayedMirror => delayed_mirror(&query.speaker_motion, params.delay, params.smooth_radius),
        Baseline::RandomExpression => random_expression(bank, rng),
        Baseline::RandomWalk => {
            let vq = vq.ok_or_else(|| Error::Config("random-walk needs a VQ-VAE checkpoint".into()))?;
            let steps = query.len() / vq.window();
            Ok(codebook_random_walk(vq, steps, rng)?.1)
        }
    }
}
