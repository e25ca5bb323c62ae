//! Synthetic dyads with known structure.
//!
//! A speaker is driven by a few smooth latent signals (sums of slow
//! sinusoids). Speaker expression, head pose and audio features are fixed
//! linear images of those drivers, so audio is a linear image of motion. The listener reacts to the same drivers
//! through one of `mode_count` response modes (gain, Gaussian smoothing and a
//! constant expression offset) after a per-sample lag. When
//! `audio_informative > 0` the audio also carries a prosody signal absent
//! from the speaker's motion, and the listener reacts to it.
//!
//! Drivers are analytic, so listener history before frame 0 is well-defined
//! and smoothing is exact (zero-phase per-frequency attenuation).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::motion::{
    normalize_rest_pose, AudioFeatureSequence, DyadSample, MotionSequence, DEFAULT_AUDIO_DIM, DEFAULT_EXPRESSION_DIM,
    DEFAULT_FPS, DEFAULT_RATE_MULTIPLE, PITCH, ROTATION_DIM,
};
use crate::error::{Error, Result};
use crate::rng::{RngStreams, StreamRng};

pub const MIN_LENGTH: usize = 64;
pub const LAG_RANGE: std::ops::RangeInclusive<usize> = 12..=22;
/// Expression coefficient that tracks the first driver exactly (the default
/// "smile" functional reads it).
pub const SMILE_COEFF: usize = 0;
const WORLD_SEED: u64 = 0x5eed_d7ad;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub expression_dim: usize,
    pub audio_dim: usize,
    pub fps: f32,
    pub rate_multiple: usize,
    pub mode_count: usize,
    /// Gaussian noise std added to motion and audio channels.
    pub noise: f32,
    /// Fixed response lag in frames; `None` draws from 12..=22 per sample.
    pub lag: Option<usize>,
    pub drivers: usize,
    /// Sinusoids summed per driver.
    pub components: usize,
    /// Driver frequency band in Hz.
    pub min_hz: f64,
    pub max_hz: f64,
    /// Weight of the audio-only prosody signal in the listener response.
    pub audio_informative: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            expression_dim: DEFAULT_EXPRESSION_DIM,
            audio_dim: DEFAULT_AUDIO_DIM,
            fps: DEFAULT_FPS,
            rate_multiple: DEFAULT_RATE_MULTIPLE,
            mode_count: 1,
            noise: 0.02,
            lag: None,
            drivers: 3,
            components: 3,
            min_hz: 0.15,
            max_hz: 0.8,
            audio_informative: 0.0,
        }
    }
}

/// Ground truth behind a generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthLabel {
    pub mode: usize,
    pub lag: usize,
}

#[derive(Debug, Clone)]
struct Signal {
    // (amplitude, cycles per frame, phase)
    parts: Vec<(f64, f64, f64)>,
}

impl Signal {
    fn random(rng: &mut StreamRng, cfg: &SynthConfig) -> Self {
        let fps = cfg.fps as f64;
        let mut parts: Vec<(f64, f64, f64)> = (0..cfg.components.max(1))
            .map(|_| {
                let amp = rng.random_range(0.5..1.0);
                let hz = if cfg.max_hz > cfg.min_hz { rng.random_range(cfg.min_hz..cfg.max_hz) } else { cfg.min_hz };
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, hz / fps, phase)
            })
            .collect();
        let power: f64 = parts.iter().map(|p| p.0 * p.0 / 2.0).sum();
        for p in &mut parts {
            p.0 /= power.sqrt();
        }
        Self { parts }
    }

    /// Value at (possibly fractional, possibly negative) frame `t`, after a
    /// zero-phase Gaussian smoother of `sigma` frames.
    fn at(&self, t: f64, sigma: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(a, f, ph)| {
                let att = (-2.0 * PI * PI * sigma * sigma * f * f).exp();
                a * att * (2.0 * PI * f * t + ph).sin()
            })
            .sum()
    }
}

/// Response mode `m`: alternating-sign gain, growing smoothing, and an
/// expression offset that separates modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseMode {
    pub gain: f64,
    pub sigma: f64,
    pub offset: f64,
}

impl ResponseMode {
    pub fn new(m: usize) -> Self {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        Self {
            gain: sign * (1.0 - 0.2 * m as f64).max(0.3),
            sigma: 1.0 + 2.0 * m as f64,
            offset: 1.5 * m as f64,
        }
    }
}

/// Fixed linear maps shared by every sample of a configuration.
#[derive(Debug, Clone)]
struct World {
    speaker_expr: Vec<f64>,
    listener_expr: Vec<f64>,
    rot: Vec<f64>,
    audio: Vec<f64>,
    prosody_audio: Vec<f64>,
    prosody_listener: Vec<f64>,
}

impl World {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = RngStreams::new(WORLD_SEED).stream("synth-world");
        let p = cfg.drivers;
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut mat = |rows: usize| -> Vec<f64> {
            (0..rows * p).map(|_| n.sample(&mut rng) / (p as f64).sqrt()).collect()
        };
        let mut speaker_expr = mat(cfg.expression_dim);
        let mut listener_expr = mat(cfg.expression_dim);
        // the smile coefficient follows driver 0 alone, in both roles
        for d in 0..p {
            let v = if d == 0 { 1.0 } else { 0.0 };
            speaker_expr[SMILE_COEFF * p + d] = v;
            listener_expr[SMILE_COEFF * p + d] = v;
        }
        // pitch tracks driver 0 (nods); yaw and roll follow the next drivers
        let mut rot = vec![0.0; ROTATION_DIM * p];
        for (axis, scale) in [0.15, 0.1, 0.05].into_iter().enumerate() {
            rot[axis * p + axis.min(p - 1)] = scale;
        }
        let audio = mat(cfg.audio_dim);
        let prosody_audio = (0..cfg.audio_dim).map(|_| n.sample(&mut rng)).collect();
        let mut prosody_listener: Vec<f64> = (0..cfg.expression_dim).map(|_| n.sample(&mut rng)).collect();
        prosody_listener[SMILE_COEFF] = 0.0;
        let norm = prosody_listener.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let prosody_listener = prosody_listener
            .iter()
            .map(|v| v / norm * (cfg.expression_dim as f64).sqrt() * 0.5)
            .collect();
        Self {
            speaker_expr,
            listener_expr,
            rot,
            audio,
            prosody_audio,
            prosody_listener,
        }
    }
}

/// Generator for one configuration; cheap to reuse across many seeds.
#[derive(Debug, Clone)]
pub struct DyadSynth {
    cfg: SynthConfig,
    world: World,
}

impl DyadSynth {
    pub fn new(cfg: SynthConfig) -> Self {
        let world = World::new(&cfg);
        Self { cfg, world }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Deterministic sample for `seed`.
    pub fn sample(&self, seed: u64, length: usize) -> Result<DyadSample> {
        Ok(self.sample_labeled(seed, length)?.0)
    }

    pub fn sample_labeled(&self, seed: u64, length: usize) -> Result<(DyadSample, SynthLabel)> {
        let mut rng = RngStreams::new(seed).stream("synth-label");
        let mode = rng.random_range(0..self.cfg.mode_count.max(1));
        let lag = self.cfg.lag.unwrap_or_else(|| rng.random_range(LAG_RANGE));
        let label = SynthLabel { mode, lag };
        Ok((self.sample_with(seed, label, seed, length)?, label))
    }

    /// Sample with the speaker drawn from `speaker_seed`, an explicit
    /// response, and noise drawn from `noise_seed`.
    pub fn sample_with(&self, speaker_seed: u64, label: SynthLabel, noise_seed: u64, length: usize) -> Result<DyadSample> {
        let cfg = &self.cfg;
        if length < MIN_LENGTH {
            return Err(Error::contract(format!("synthetic samples need at least {MIN_LENGTH} frames, got {length}")));
        }
        if cfg.mode_count == 0 || label.mode >= cfg.mode_count {
            return Err(Error::contract(format!("mode {} outside 0..{}", label.mode, cfg.mode_count)));
        }
        let p = cfg.drivers;
        let mut srng = RngStreams::new(speaker_seed).stream("synth-speaker");
        let drivers: Vec<Signal> = (0..p).map(|_| Signal::random(&mut srng, cfg)).collect();
        let prosody = Signal::random(&mut srng, cfg);
        let mode = ResponseMode::new(label.mode);

        let noise = Normal::new(0.0, cfg.noise.max(0.0) as f64).expect("finite noise");
        let mut nrng = RngStreams::new(noise_seed).stream("synth-noise");
        let mut jitter = |scale: f64| if cfg.noise > 0.0 { scale * noise.sample(&mut nrng) } else { 0.0 };

        let d = cfg.expression_dim;
        let w = d + ROTATION_DIM;
        let mut speaker = vec![0.0f32; length * w];
        let mut listener = vec![0.0f32; length * w];
        let mut drv = vec![0.0; p];
        let mut resp = vec![0.0; p];
        for t in 0..length {
            let tf = t as f64;
            let tl = tf - label.lag as f64;
            for k in 0..p {
                drv[k] = drivers[k].at(tf, 0.0);
                resp[k] = mode.gain * drivers[k].at(tl, mode.sigma);
            }
            let pros = prosody.at(tl, mode.sigma) * cfg.audio_informative as f64;
            for c in 0..d {
                let row = &self.world.speaker_expr[c * p..(c + 1) * p];
                let s: f64 = row.iter().zip(&drv).map(|(a, b)| a * b).sum();
                speaker[t * w + c] = (s + jitter(1.0)) as f32;
                let row = &self.world.listener_expr[c * p..(c + 1) * p];
                let mut l: f64 = row.iter().zip(&resp).map(|(a, b)| a * b).sum();
                if c == 1 % d {
                    l += mode.offset;
                }
                l += pros * self.world.prosody_listener[c];
                listener[t * w + c] = (l + jitter(1.0)) as f32;
            }
            for a in 0..ROTATION_DIM {
                let row = &self.world.rot[a * p..(a + 1) * p];
                let s: f64 = row.iter().zip(&drv).map(|(x, y)| x * y).sum();
                let l: f64 = row.iter().zip(&resp).map(|(x, y)| x * y).sum();
                speaker[t * w + d + a] = (s + jitter(0.1 * 0.15)) as f32;
                listener[t * w + d + a] = (l + jitter(0.1 * 0.15)) as f32;
            }
        }

        let r = cfg.rate_multiple;
        let da = cfg.audio_dim;
        let mut audio = vec![0.0f32; length * r * da];
        for j in 0..length * r {
            let tf = j as f64 / r as f64;
            for k in 0..p {
                drv[k] = drivers[k].at(tf, 0.0);
            }
            // prosody reaches the audio only when the listener can use it
            let pros = if cfg.audio_informative > 0.0 { prosody.at(tf, 0.0) } else { 0.0 };
            for c in 0..da {
                let row = &self.world.audio[c * p..(c + 1) * p];
                let s: f64 = row.iter().zip(&drv).map(|(a, b)| a * b).sum();
                audio[j * da + c] = (s + pros * self.world.prosody_audio[c] + jitter(1.0)) as f32;
            }
        }

        let speaker = normalize_rest_pose(&MotionSequence::new(d, cfg.fps, speaker)?)?;
        let listener = normalize_rest_pose(&MotionSequence::new(d, cfg.fps, listener)?)?;
        let audio = AudioFeatureSequence::new(da, r, audio)?;
        DyadSample::new(format!("synth-{speaker_seed}"), speaker, audio, listener)
    }

    /// `count` samples with consecutive seeds starting at `first_seed`.
    pub fn generate(&self, first_seed: u64, count: usize, length: usize) -> Result<Vec<DyadSample>> {
        (0..count as u64).map(|i| self.sample(first_seed + i, length)).collect()
    }
}

/// Default-configuration sample; see [`DyadSynth`] for control over dims,
/// noise and lag.
pub fn synth_dyad(seed: u64, length: usize, mode_count: usize) -> Result<DyadSample> {
    DyadSynth::new(SynthConfig {
        mode_count,
        ..SynthConfig::default()
    })
    .sample(seed, length)
}

/// Index of the pitch channel in a frame row.
pub fn pitch_channel(expression_dim: usize) -> usize {
    expression_dim + PITCH
}
