//! Speaker encoder: fuses speaker motion and audio into one embedding per
//! listener token.
//!
//! In cross mode every block attends with queries from the projected raw
//! audio and keys/values from the running motion stream. A conv + max-pool
//! stack then brings the frame rate down to the token rate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Binder, ParameterStore, Tape, Tensor};
use crate::data::{AudioFeatureSequence, MotionSequence, ROTATION_DIM};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, LearnedPositions, Linear, Transformer, TransformerDims};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Audio queries over motion keys/values.
    Cross,
    /// One transformer per modality, fused by channel concatenation.
    Concat,
    MotionOnly,
    AudioOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [Self::Cross, Self::Concat, Self::MotionOnly, Self::AudioOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cross => "cross",
            Self::Concat => "concat",
            Self::MotionOnly => "motion-only",
            Self::AudioOnly => "audio-only",
        }
    }

    pub fn uses_motion(self) -> bool {
        self != Self::AudioOnly
    }

    pub fn uses_audio(self) -> bool {
        self != Self::MotionOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode `{s}` (expected cross, concat, motion-only, audio-only)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEncoderConfig {
    pub expression_dim: usize,
    pub audio_dim: usize,
    pub rate_multiple: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    pub kernel: usize,
    pub downsample_layers: usize,
    /// Speaker frames per window: past context plus one token of future.
    pub window_frames: usize,
    /// Listener tokens per window (τ).
    pub tokens: usize,
    /// Keep one extra downsampled step, giving τ+1 outputs.
    pub extra_step: bool,
    pub mode: FusionMode,
}

impl Default for SpeakerEncoderConfig {
    fn default() -> Self {
        Self {
            expression_dim: crate::data::DEFAULT_EXPRESSION_DIM,
            audio_dim: crate::data::DEFAULT_AUDIO_DIM,
            rate_multiple: crate::data::DEFAULT_RATE_MULTIPLE,
            hidden: 1024,
            heads: 8,
            layers: 12,
            ff_mult: 4,
            kernel: 5,
            downsample_layers: 3,
            window_frames: 40,
            tokens: 4,
            extra_step: false,
            mode: FusionMode::Cross,
        }
    }
}

impl SpeakerEncoderConfig {
    pub fn output_steps(&self) -> usize {
        self.tokens + usize::from(self.extra_step)
    }

    pub fn frame_dim(&self) -> usize {
        self.expression_dim + ROTATION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let pooled = self.window_frames >> self.downsample_layers;
        if self.window_frames % (1 << self.downsample_layers) != 0 {
            return Err(Error::Config(format!(
                "speaker window {} not divisible by {}",
                self.window_frames,
                1 << self.downsample_layers
            )));
        }
        if pooled < self.output_steps() || self.tokens == 0 {
            return Err(Error::Config(format!(
                "speaker window of {} frames yields {pooled} steps, need {}",
                self.window_frames,
                self.output_steps()
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!("hidden {} not divisible by {} heads", self.hidden, self.heads)));
        }
        if self.kernel % 2 == 0 || self.rate_multiple == 0 || self.audio_dim == 0 {
            return Err(Error::Config("speaker encoder needs odd kernel and positive audio dims".into()));
        }
        Ok(())
    }
}

/// Non-overlapping max-pool of audio frames by the rate multiple, giving
/// `target_len` rows. Up to `rate_multiple − 1` missing trailing frames are
/// filled by repeating the last frame; surplus frames within the same
/// tolerance are dropped.
pub fn pool_audio(audio: &AudioFeatureSequence, target_len: usize) -> Result<Vec<f32>> {
    let r = audio.rate_multiple();
    let need = target_len * r;
    if audio.len().abs_diff(need) >= r || audio.is_empty() {
        return Err(Error::shape("pool_audio", &[audio.len()], &[need]));
    }
    let d = audio.feature_dim();
    let mut out = vec![f32::NEG_INFINITY; target_len * d];
    for t in 0..target_len {
        let row = &mut out[t * d..(t + 1) * d];
        for j in t * r..(t + 1) * r {
            let src = audio.row(j.min(audio.len() - 1));
            for (o, &v) in row.iter_mut().zip(src) {
                *o = o.max(v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpeakerEncoder {
    pub config: SpeakerEncoderConfig,
    motion_proj: Option<Linear>,
    audio_proj: Option<Linear>,
    motion_pos: Option<LearnedPositions>,
    audio_pos: Option<LearnedPositions>,
    main: Transformer,
    audio_tf: Option<Transformer>,
    fuse: Option<Linear>,
    down: Vec<Conv1d>,
}

impl SpeakerEncoder {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, config: SpeakerEncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let h = c.hidden;
        let dims = TransformerDims {
            hidden: h,
            heads: c.heads,
            layers: c.layers,
            ff_mult: c.ff_mult,
        };
        let (m, a) = (c.mode.uses_motion(), c.mode.uses_audio());
        let motion_proj = m.then(|| Linear::new(store, rng, "speaker.motion_proj", c.frame_dim(), h)).transpose()?;
        let motion_pos = m
            .then(|| LearnedPositions::new(store, rng, "speaker.motion_pos", c.window_frames, h))
            .transpose()?;
        let audio_proj = a.then(|| Linear::new(store, rng, "speaker.audio_proj", c.audio_dim, h)).transpose()?;
        let audio_pos = a
            .then(|| LearnedPositions::new(store, rng, "speaker.audio_pos", c.window_frames, h))
            .transpose()?;
        let main = Transformer::new(store, rng, "speaker.tf", dims, c.mode == FusionMode::Cross)?;
        let (audio_tf, fuse) = if c.mode == FusionMode::Concat {
            (
                Some(Transformer::new(store, rng, "speaker.audio_tf", dims, false)?),
                Some(Linear::new(store, rng, "speaker.fuse", 2 * h, h)?),
            )
        } else {
            (None, None)
        };
        let pad = c.kernel / 2;
        let down = (0..c.downsample_layers)
            .map(|i| Conv1d::new(store, rng, &format!("speaker.down{i}"), h, h, c.kernel, 1, pad))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            motion_proj,
            audio_proj,
            motion_pos,
            audio_pos,
            main,
            audio_tf,
            fuse,
            down,
        })
    }

    fn embed(proj: &Option<Linear>, pos: &Option<LearnedPositions>, p: &Binder, x: &Tensor) -> Result<Tensor> {
        let (proj, pos) = (proj.as_ref().expect("modality in use"), pos.as_ref().expect("modality in use"));
        pos.add_to(p, &proj.forward(p, x)?)
    }

    /// Per-frame fused features `[L, d_k]` from motion `[L, d_m+3]` and
    /// pooled audio `[L, d_a]`.
    pub fn cross_attend(&self, p: &Binder, motion: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let (ms, as_) = (motion.shape(), audio.shape());
        if ms.len() != 2 || as_.len() != 2 || ms[0] != as_[0] {
            return Err(Error::shape("cross_attend", &ms, &as_));
        }
        if ms[1] != self.config.frame_dim() || as_[1] != self.config.audio_dim {
            return Err(Error::shape("cross_attend", &ms, &as_));
        }
        match self.config.mode {
            FusionMode::Cross => {
                let m = Self::embed(&self.motion_proj, &self.motion_pos, p, motion)?;
                let a = Self::embed(&self.audio_proj, &self.audio_pos, p, audio)?;
                self.main.forward(p, &m, Some(&a), None)
            }
            FusionMode::Concat => {
                let m = Self::embed(&self.motion_proj, &self.motion_pos, p, motion)?;
                let a = Self::embed(&self.audio_proj, &self.audio_pos, p, audio)?;
                let m = self.main.forward(p, &m, None, None)?;
                let a = self.audio_tf.as_ref().expect("concat mode").forward(p, &a, None, None)?;
                self.fuse.as_ref().expect("concat mode").forward(p, &concat_cols(&[m, a])?)
            }
            FusionMode::MotionOnly => {
                let m = Self::embed(&self.motion_proj, &self.motion_pos, p, motion)?;
                self.main.forward(p, &m, None, None)
            }
            FusionMode::AudioOnly => {
                let a = Self::embed(&self.audio_proj, &self.audio_pos, p, audio)?;
                self.main.forward(p, &a, None, None)
            }
        }
    }

    /// `[τ_s, d_k]` speaker embedding: fused features downsampled by conv +
    /// pool, keeping the last `τ_s` steps.
    pub fn encode(&self, p: &Binder, motion: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let len = motion.shape()[0];
        if len != self.config.window_frames {
            return Err(Error::shape("encode_speaker", &[len], &[self.config.window_frames]));
        }
        let mut h = self.cross_attend(p, motion, audio)?;
        for conv in &self.down {
            h = conv.forward(p, &h)?.relu()?.max_pool(2)?;
        }
        let steps = h.shape()[0];
        h.slice_rows(steps - self.config.output_steps(), steps)
    }
}

/// Speaker window ending at frame `end` (exclusive), `len` frames long,
/// zero-filled before frame 0. Returns flat motion and pooled audio rows.
pub fn speaker_window(motion: &MotionSequence, pooled_audio: &[f32], audio_dim: usize, end: usize, len: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    if end > motion.len() || pooled_audio.len() < end * audio_dim {
        return Err(Error::Range(format!(
            "speaker window ends at frame {end}, but the speaker has {} frames",
            motion.len()
        )));
    }
    let c = motion.frame_dim();
    let mut m = vec![0.0; len * c];
    let mut a = vec![0.0; len * audio_dim];
    let first = end as isize - len as isize;
    for r in 0..len {
        let t = first + r as isize;
        if t < 0 {
            continue;
        }
        let t = t as usize;
        m[r * c..(r + 1) * c].copy_from_slice(motion.row(t));
        a[r * audio_dim..(r + 1) * audio_dim].copy_from_slice(&pooled_audio[t * audio_dim..(t + 1) * audio_dim]);
    }
    Ok((m, a))
}

/// Convenience wrapper: the speaker embedding for a whole window, without
/// gradients. `motion` must be exactly `window_frames` long.
pub fn encode_speaker(
    encoder: &SpeakerEncoder,
    store: &ParameterStore,
    motion: &MotionSequence,
    audio: &AudioFeatureSequence,
) -> Result<Vec<f32>> {
    let tape = Tape::new();
    let p = Binder::new(&tape, store, false);
    let pooled = pool_audio(audio, motion.len())?;
    let m = tape.constant(&[motion.len(), motion.frame_dim()], motion.as_slice().to_vec())?;
    let a = tape.constant(&[motion.len(), audio.feature_dim()], pooled)?;
    Ok(encoder.encode(&p, &m, &a)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    fn tiny(mode: FusionMode) -> SpeakerEncoderConfig {
        SpeakerEncoderConfig {
            expression_dim: 3,
            audio_dim: 4,
            hidden: 8,
            heads: 2,
            layers: 1,
            ff_mult: 2,
            mode,
            ..SpeakerEncoderConfig::default()
        }
    }

    #[test]
    fn pool_audio_blocks() {
        let mut data = vec![0.0f32; 128];
        data[5] = 7.0;
        let a = AudioFeatureSequence::new(1, 4, data).unwrap();
        let out = pool_audio(&a, 32).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(out[1], 7.0);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);
        let c = AudioFeatureSequence::new(2, 4, vec![1.5; 2 * 126]).unwrap();
        assert!(pool_audio(&c, 32).unwrap().iter().all(|&v| v == 1.5));
        let short = AudioFeatureSequence::new(1, 4, vec![0.0; 124]).unwrap();
        assert!(matches!(pool_audio(&short, 32), Err(Error::Shape { .. })));
    }

    #[test]
    fn forty_frames_give_tau_steps() {
        for mode in FusionMode::ALL {
            for extra in [false, true] {
                let mut store = ParameterStore::new(0);
                let mut rng = RngStreams::new(0).stream("t");
                let cfg = SpeakerEncoderConfig { extra_step: extra, ..tiny(mode) };
                let enc = SpeakerEncoder::new(&mut store, &mut rng, cfg).unwrap();
                let m = MotionSequence::new(3, 30.0, vec![0.1; 40 * 6]).unwrap();
                let a = AudioFeatureSequence::new(4, 4, vec![0.2; 160 * 4]).unwrap();
                let out = encode_speaker(&enc, &store, &m, &a).unwrap();
                assert_eq!(out.len(), (4 + usize::from(extra)) * 8, "{mode}");
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
        assert!(matches!("early".parse::<FusionMode>(), Err(Error::Config(_))));
    }

    #[test]
    fn window_zero_fills_before_start() {
        let m = MotionSequence::new(1, 30.0, (0..10 * 4).map(|v| v as f32).collect()).unwrap();
        let pooled: Vec<f32> = (0..10).map(|v| v as f32).collect();
        let (wm, wa) = speaker_window(&m, &pooled, 1, 3, 5).unwrap();
        assert_eq!(&wm[..8], &[0.0; 8]);
        assert_eq!(&wm[8..12], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(wa, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(matches!(speaker_window(&m, &pooled, 1, 11, 5), Err(Error::Range(_))));
    }
}
