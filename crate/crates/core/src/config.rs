//! Experiment configuration as a flat `key = value` text file.
//!
//! A file may start from a named profile (`profile = desk`) and override
//! individual keys. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::BaselineParams;
use crate::fusion::{FusionMode, SpeakerEncoderConfig};
use crate::metrics::MetricSettings;
use crate::predictor::{ListenerConfig, PredictorConfig, PredictorTrainConfig};
use crate::vqvae::{VqTrainConfig, VqVaeConfig};
use crate::error::{Error, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "LISTENER_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full-size model constants.
    Defaults,
    /// Small models that train in minutes on one CPU core.
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "defaults" => Ok(Profile::Defaults),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile `{s}` (expected defaults, desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Frames per token (w).
    pub window: usize,
    /// Frames per evaluated sequence (T).
    pub seq_len: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Expected data dims; 0 accepts whatever the dataset holds.
    pub expression_dim: usize,
    pub audio_dim: usize,

    pub vq_conv_channels: usize,
    pub vq_kernel: usize,
    pub vq_hidden: usize,
    pub vq_heads: usize,
    pub vq_layers: usize,
    pub vq_ff_mult: usize,
    pub vq_max_tokens: usize,
    pub vq_commit_weight: f32,
    pub vq_warmup_epochs: usize,
    /// Length of listener windows the VQ-VAE trains on.
    pub vq_train_len: usize,
    pub vq_epochs: usize,
    pub vq_batch: usize,
    pub vq_base_lr: f64,
    pub vq_warmup: u64,

    pub speaker_hidden: usize,
    pub speaker_heads: usize,
    pub speaker_layers: usize,
    pub speaker_ff_mult: usize,
    pub speaker_window: usize,
    pub speaker_tokens: usize,
    pub speaker_extra_step: bool,
    pub fusion: FusionMode,

    pub predictor_hidden: usize,
    pub predictor_heads: usize,
    pub predictor_layers: usize,
    pub predictor_ff_mult: usize,
    pub aux_positions: usize,
    pub aux_weight: f32,
    pub mask_prob: f64,
    pub predictor_epochs: usize,
    pub predictor_batch: usize,
    pub predictor_peak_lr: f64,
    pub predictor_warmup: u64,
    pub predictor_eval_every: usize,

    pub nucleus_p: f64,
    pub metrics: MetricSettings,
    pub baselines: BaselineParams,
    /// Train/val/test fractions of each sample, cut contiguously in time.
    pub split: [f64; 3],
    /// Stride between training windows.
    pub stride: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Defaults)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let vq = VqVaeConfig::default();
        let vt = VqTrainConfig::default();
        let sp = SpeakerEncoderConfig::default();
        let pr = PredictorConfig::default();
        let pt = PredictorTrainConfig::default();
        let base = Self {
            seed: 0,
            window: vq.window(),
            seq_len: 64,
            codebook_size: vq.codebook_size,
            latent_dim: vq.latent_dim,
            expression_dim: 0,
            audio_dim: 0,
            vq_conv_channels: vq.conv_channels,
            vq_kernel: vq.kernel,
            vq_hidden: vq.hidden,
            vq_heads: vq.heads,
            vq_layers: vq.layers,
            vq_ff_mult: vq.ff_mult,
            vq_max_tokens: vq.max_tokens,
            vq_commit_weight: vq.commit_weight,
            vq_warmup_epochs: vq.warmup_epochs,
            vq_train_len: 32,
            vq_epochs: vt.epochs,
            vq_batch: vt.batch_size,
            vq_base_lr: vt.base_lr,
            vq_warmup: vt.warmup,
            speaker_hidden: sp.hidden,
            speaker_heads: sp.heads,
            speaker_layers: sp.layers,
            speaker_ff_mult: sp.ff_mult,
            speaker_window: sp.window_frames,
            speaker_tokens: sp.tokens,
            speaker_extra_step: sp.extra_step,
            fusion: sp.mode,
            predictor_hidden: pr.hidden,
            predictor_heads: pr.heads,
            predictor_layers: pr.layers,
            predictor_ff_mult: pr.ff_mult,
            aux_positions: pr.aux_positions,
            aux_weight: pr.aux_weight,
            mask_prob: pr.mask_prob,
            predictor_epochs: pt.epochs,
            predictor_batch: pt.batch_size,
            predictor_peak_lr: pt.peak_lr,
            predictor_warmup: pt.warmup,
            predictor_eval_every: pt.eval_every,
            nucleus_p: 0.9,
            metrics: MetricSettings::default(),
            baselines: BaselineParams::default(),
            split: [0.7, 0.2, 0.1],
            stride: vq.window(),
        };
        match profile {
            Profile::Defaults => base,
            Profile::Desk => Self {
                latent_dim: 64,
                vq_conv_channels: 64,
                vq_hidden: 64,
                vq_heads: 4,
                vq_layers: 2,
                vq_ff_mult: 2,
                vq_warmup_epochs: 10,
                vq_epochs: 200,
                vq_batch: 8,
                vq_base_lr: 0.16,
                vq_warmup: 100,
                speaker_hidden: 32,
                speaker_heads: 4,
                speaker_layers: 1,
                speaker_ff_mult: 2,
                predictor_hidden: 32,
                predictor_heads: 4,
                predictor_layers: 2,
                predictor_ff_mult: 2,
                predictor_epochs: 200,
                predictor_batch: 16,
                predictor_peak_lr: 1e-3,
                predictor_warmup: 100,
                predictor_eval_every: 10,
                ..base
            },
        }
    }

    fn downsample_layers(&self) -> usize {
        self.window.trailing_zeros() as usize
    }

    pub fn vqvae(&self, expression_dim: usize, fps: f32) -> VqVaeConfig {
        VqVaeConfig {
            expression_dim,
            fps,
            downsample_layers: self.downsample_layers(),
            conv_channels: self.vq_conv_channels,
            kernel: self.vq_kernel,
            hidden: self.vq_hidden,
            heads: self.vq_heads,
            layers: self.vq_layers,
            ff_mult: self.vq_ff_mult,
            codebook_size: self.codebook_size,
            latent_dim: self.latent_dim,
            max_tokens: self.vq_max_tokens,
            commit_weight: self.vq_commit_weight,
            warmup_epochs: self.vq_warmup_epochs,
        }
    }

    pub fn vq_train(&self) -> VqTrainConfig {
        VqTrainConfig {
            epochs: self.vq_epochs,
            batch_size: self.vq_batch,
            base_lr: self.vq_base_lr,
            warmup: self.vq_warmup,
            seed: self.seed,
        }
    }

    pub fn listener(&self, expression_dim: usize, audio_dim: usize, rate_multiple: usize) -> ListenerConfig {
        ListenerConfig {
            speaker: SpeakerEncoderConfig {
                expression_dim,
                audio_dim,
                rate_multiple,
                hidden: self.speaker_hidden,
                heads: self.speaker_heads,
                layers: self.speaker_layers,
                ff_mult: self.speaker_ff_mult,
                kernel: self.vq_kernel,
                downsample_layers: self.downsample_layers(),
                window_frames: self.speaker_window,
                tokens: self.speaker_tokens,
                extra_step: self.speaker_extra_step,
                mode: self.fusion,
            },
            predictor: PredictorConfig {
                codebook_size: self.codebook_size,
                hidden: self.predictor_hidden,
                heads: self.predictor_heads,
                layers: self.predictor_layers,
                ff_mult: self.predictor_ff_mult,
                aux_positions: self.aux_positions,
                aux_weight: self.aux_weight,
                mask_prob: self.mask_prob,
            },
        }
    }

    pub fn predictor_train(&self) -> PredictorTrainConfig {
        PredictorTrainConfig {
            epochs: self.predictor_epochs,
            batch_size: self.predictor_batch,
            peak_lr: self.predictor_peak_lr,
            warmup: self.predictor_warmup,
            seed: self.seed,
            eval_every: self.predictor_eval_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || !self.window.is_power_of_two() {
            return Err(Error::Config(format!("w = {} must be a power of two ≥ 2", self.window)));
        }
        for (what, len) in [("T", self.seq_len), ("vq.train_len", self.vq_train_len), ("speaker.window", self.speaker_window)] {
            if len == 0 || len % self.window != 0 {
                return Err(Error::Config(format!("{what} = {len} is not a positive multiple of w = {}", self.window)));
            }
        }
        if self.vq_train_len / self.window > self.vq_max_tokens {
            return Err(Error::Config(format!(
                "vq.train_len = {} exceeds vq.max_tokens · w = {}",
                self.vq_train_len,
                self.vq_max_tokens * self.window
            )));
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Config(format!("split ratios {:?} must lie in [0, 1] and sum to 1", self.split)));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Config(format!("nucleus_p = {} must lie in (0, 1]", self.nucleus_p)));
        }
        if self.stride == 0 || self.vq_batch == 0 || self.predictor_batch == 0 {
            return Err(Error::Config("stride and batch sizes must be positive".into()));
        }
        if self.metrics.k_expression == 0 || self.metrics.k_rotation == 0 || self.metrics.smile_weights.is_empty() {
            return Err(Error::Config("k-means ks and smile weights must be non-empty".into()));
        }
        let ed = self.expression_dim.max(1);
        self.vqvae(ed, 30.0).validate()?;
        self.listener(ed, self.audio_dim.max(1), 4).validate()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
            }
        }
        let v = value.trim();
        match key {
            "profile" => *self = Self::profile(Profile::parse(v)?),
            "seed" => self.seed = num(key, v)?,
            "w" => self.window = num(key, v)?,
            "T" => self.seq_len = num(key, v)?,
            "K" => self.codebook_size = num(key, v)?,
            "d_z" => self.latent_dim = num(key, v)?,
            "data.expression_dim" => self.expression_dim = num(key, v)?,
            "data.audio_dim" => self.audio_dim = num(key, v)?,
            "vq.conv_channels" => self.vq_conv_channels = num(key, v)?,
            "vq.kernel" => self.vq_kernel = num(key, v)?,
            "vq.hidden" => self.vq_hidden = num(key, v)?,
            "vq.heads" => self.vq_heads = num(key, v)?,
            "vq.layers" => self.vq_layers = num(key, v)?,
            "vq.ff_mult" => self.vq_ff_mult = num(key, v)?,
            "vq.max_tokens" => self.vq_max_tokens = num(key, v)?,
            "vq.commit_weight" => self.vq_commit_weight = num(key, v)?,
            "vq.warmup_epochs" => self.vq_warmup_epochs = num(key, v)?,
            "vq.train_len" => self.vq_train_len = num(key, v)?,
            "vq.epochs" => self.vq_epochs = num(key, v)?,
            "vq.batch" => self.vq_batch = num(key, v)?,
            "vq.base_lr" => self.vq_base_lr = num(key, v)?,
            "vq.warmup" => self.vq_warmup = num(key, v)?,
            "speaker.hidden" => self.speaker_hidden = num(key, v)?,
            "speaker.heads" => self.speaker_heads = num(key, v)?,
            "speaker.layers" => self.speaker_layers = num(key, v)?,
            "speaker.ff_mult" => self.speaker_ff_mult = num(key, v)?,
            "speaker.window" => self.speaker_window = num(key, v)?,
            "speaker.tokens" => self.speaker_tokens = num(key, v)?,
            "speaker.extra_step" => self.speaker_extra_step = flag(key, v)?,
            "fusion" => self.fusion = v.parse()?,
            "predictor.hidden" => self.predictor_hidden = num(key, v)?,
            "predictor.heads" => self.predictor_heads = num(key, v)?,
            "predictor.layers" => self.predictor_layers = num(key, v)?,
            "predictor.ff_mult" => self.predictor_ff_mult = num(key, v)?,
            "predictor.aux_positions" => self.aux_positions = num(key, v)?,
            "predictor.aux_weight" => self.aux_weight = num(key, v)?,
            "predictor.mask_prob" => self.mask_prob = num(key, v)?,
            "predictor.epochs" => self.predictor_epochs = num(key, v)?,
            "predictor.batch" => self.predictor_batch = num(key, v)?,
            "predictor.peak_lr" => self.predictor_peak_lr = num(key, v)?,
            "predictor.warmup" => self.predictor_warmup = num(key, v)?,
            "predictor.eval_every" => self.predictor_eval_every = num(key, v)?,
            "nucleus_p" => self.nucleus_p = num(key, v)?,
            "metrics.k_expression" => self.metrics.k_expression = num(key, v)?,
            "metrics.k_rotation" => self.metrics.k_rotation = num(key, v)?,
            "metrics.kmeans_seed" => self.metrics.kmeans_seed = num(key, v)?,
            "metrics.max_lag" => self.metrics.max_lag = num(key, v)?,
            "metrics.smile_weights" => {
                self.metrics.smile_weights = v
                    .split(',')
                    .map(|s| num::<f64>(key, s.trim()))
                    .collect::<Result<Vec<_>>>()?
            }
            "baseline.smooth_radius" => self.baselines.smooth_radius = num(key, v)?,
            "baseline.delay" => self.baselines.delay = num(key, v)?,
            "split.train" => self.split[0] = num(key, v)?,
            "split.val" => self.split[1] = num(key, v)?,
            "split.test" => self.split[2] = num(key, v)?,
            "stride" => self.stride = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses the text format on top of the defaults profile. Values are
    /// checked with [`validate`](Self::validate).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies assignments in order without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let weights: Vec<String> = self.metrics.smile_weights.iter().map(|w| w.to_string()).collect();
        vec![
            ("seed", self.seed.to_string()),
            ("w", self.window.to_string()),
            ("T", self.seq_len.to_string()),
            ("K", self.codebook_size.to_string()),
            ("d_z", self.latent_dim.to_string()),
            ("data.expression_dim", self.expression_dim.to_string()),
            ("data.audio_dim", self.audio_dim.to_string()),
            ("vq.conv_channels", self.vq_conv_channels.to_string()),
            ("vq.kernel", self.vq_kernel.to_string()),
            ("vq.hidden", self.vq_hidden.to_string()),
            ("vq.heads", self.vq_heads.to_string()),
            ("vq.layers", self.vq_layers.to_string()),
            ("vq.ff_mult", self.vq_ff_mult.to_string()),
            ("vq.max_tokens", self.vq_max_tokens.to_string()),
            ("vq.commit_weight", self.vq_commit_weight.to_string()),
            ("vq.warmup_epochs", self.vq_warmup_epochs.to_string()),
            ("vq.train_len", self.vq_train_len.to_string()),
            ("vq.epochs", self.vq_epochs.to_string()),
            ("vq.batch", self.vq_batch.to_string()),
            ("vq.base_lr", self.vq_base_lr.to_string()),
            ("vq.warmup", self.vq_warmup.to_string()),
            ("speaker.hidden", self.speaker_hidden.to_string()),
            ("speaker.heads", self.speaker_heads.to_string()),
            ("speaker.layers", self.speaker_layers.to_string()),
            ("speaker.ff_mult", self.speaker_ff_mult.to_string()),
            ("speaker.window", self.speaker_window.to_string()),
            ("speaker.tokens", self.speaker_tokens.to_string()),
            ("speaker.extra_step", self.speaker_extra_step.to_string()),
            ("fusion", self.fusion.to_string()),
            ("predictor.hidden", self.predictor_hidden.to_string()),
            ("predictor.heads", self.predictor_heads.to_string()),
            ("predictor.layers", self.predictor_layers.to_string()),
            ("predictor.ff_mult", self.predictor_ff_mult.to_string()),
            ("predictor.aux_positions", self.aux_positions.to_string()),
            ("predictor.aux_weight", self.aux_weight.to_string()),
            ("predictor.mask_prob", self.mask_prob.to_string()),
            ("predictor.epochs", self.predictor_epochs.to_string()),
            ("predictor.batch", self.predictor_batch.to_string()),
            ("predictor.peak_lr", self.predictor_peak_lr.to_string()),
            ("predictor.warmup", self.predictor_warmup.to_string()),
            ("predictor.eval_every", self.predictor_eval_every.to_string()),
            ("nucleus_p", self.nucleus_p.to_string()),
            ("metrics.k_expression", self.metrics.k_expression.to_string()),
            ("metrics.k_rotation", self.metrics.k_rotation.to_string()),
            ("metrics.kmeans_seed", self.metrics.kmeans_seed.to_string()),
            ("metrics.max_lag", self.metrics.max_lag.to_string()),
            ("metrics.smile_weights", weights.join(",")),
            ("baseline.smooth_radius", self.baselines.smooth_radius.to_string()),
            ("baseline.delay", self.baselines.delay.to_string()),
            ("split.train", self.split[0].to_string()),
            ("split.val", self.split[1].to_string()),
            ("split.test", self.split[2].to_string()),
            ("stride", self.stride.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
