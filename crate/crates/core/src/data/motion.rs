use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 50 expression coefficients plus 3 jaw-rotation values.
pub const DEFAULT_EXPRESSION_DIM: usize = 53;
pub const DEFAULT_AUDIO_DIM: usize = 128;
pub const DEFAULT_FPS: f32 = 30.0;
pub const DEFAULT_RATE_MULTIPLE: usize = 4;
/// Head pose is three Euler angles, intrinsic XYZ (pitch, yaw, roll).
pub const ROTATION_DIM: usize = 3;
pub const PITCH: usize = 0;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f32) -> f32 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacialFrame {
    pub expression: Vec<f32>,
    /// Pitch, yaw, roll in radians relative to the rest pose.
    pub rotation: [f32; 3],
}

/// A time-major stack of frames, stored flat as `len × (d_m + 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    expression_dim: usize,
    fps: f32,
    data: Vec<f32>,
}

impl MotionSequence {
    pub fn new(expression_dim: usize, fps: f32, data: Vec<f32>) -> Result<Self> {
        let width = expression_dim + ROTATION_DIM;
        if data.is_empty() {
            return Err(Error::EmptyInput("motion sequence has no frames".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::shape("MotionSequence::new", &[data.len()], &[width]));
        }
        Ok(Self { expression_dim, fps, data })
    }

    pub fn from_frames(frames: &[FacialFrame], fps: f32) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::EmptyInput("motion sequence has no frames".into()))?;
        let d = first.expression.len();
        let mut data = Vec::with_capacity(frames.len() * (d + ROTATION_DIM));
        for f in frames {
            if f.expression.len() != d {
                return Err(Error::shape("MotionSequence::from_frames", &[d], &[f.expression.len()]));
            }
            data.extend_from_slice(&f.expression);
            data.extend_from_slice(&f.rotation);
        }
        Self::new(d, fps, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.frame_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn expression_dim(&self) -> usize {
        self.expression_dim
    }

    pub fn frame_dim(&self) -> usize {
        self.expression_dim + ROTATION_DIM
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let w = self.frame_dim();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn expression(&self, t: usize) -> &[f32] {
        &self.row(t)[..self.expression_dim]
    }

    pub fn rotation(&self, t: usize) -> [f32; 3] {
        let r = &self.row(t)[self.expression_dim..];
        [r[0], r[1], r[2]]
    }

    pub fn frame(&self, t: usize) -> FacialFrame {
        FacialFrame {
            expression: self.expression(t).to_vec(),
            rotation: self.rotation(t),
        }
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Range(format!("frames {start}..{end} of a {}-frame sequence", self.len())));
        }
        let w = self.frame_dim();
        Self::new(self.expression_dim, self.fps, self.data[start * w..end * w].to_vec())
    }

    /// One channel over time.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        (0..self.len()).map(|t| self.row(t)[c]).collect()
    }
}

/// Audio feature frames at `rate_multiple` × the motion frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    feature_dim: usize,
    rate_multiple: usize,
    data: Vec<f32>,
}

impl AudioFeatureSequence {
    pub fn new(feature_dim: usize, rate_multiple: usize, data: Vec<f32>) -> Result<Self> {
        if feature_dim == 0 || rate_multiple == 0 {
            return Err(Error::contract("audio features need positive dim and rate multiple"));
        }
        if data.len() % feature_dim != 0 {
            return Err(Error::shape("AudioFeatureSequence::new", &[data.len()], &[feature_dim]));
        }
        Ok(Self {
            feature_dim,
            rate_multiple,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn rate_multiple(&self) -> usize {
        self.rate_multiple
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Frames `start..end`, zero-padded where the range runs past the end.
    pub fn slice_padded(&self, start: usize, end: usize) -> Self {
        let d = self.feature_dim;
        let mut out = vec![0.0; (end - start) * d];
        let avail = self.len().min(end);
        if start < avail {
            out[..(avail - start) * d].copy_from_slice(&self.data[start * d..avail * d]);
        }
        Self {
            feature_dim: d,
            rate_multiple: self.rate_multiple,
            data: out,
        }
    }
}

/// One aligned speaker/listener pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadSample {
    pub id: String,
    pub speaker_motion: MotionSequence,
    pub speaker_audio: AudioFeatureSequence,
    pub listener_motion: MotionSequence,
}

impl DyadSample {
    pub fn new(
        id: impl Into<String>,
        speaker_motion: MotionSequence,
        speaker_audio: AudioFeatureSequence,
        listener_motion: MotionSequence,
    ) -> Result<Self> {
        if speaker_motion.len() != listener_motion.len() {
            return Err(Error::shape(
                "DyadSample::new",
                &[speaker_motion.len()],
                &[listener_motion.len()],
            ));
        }
        if speaker_motion.frame_dim() != listener_motion.frame_dim() {
            return Err(Error::shape(
                "DyadSample::new",
                &[speaker_motion.frame_dim()],
                &[listener_motion.frame_dim()],
            ));
        }
        let r = speaker_audio.rate_multiple();
        let want = r * speaker_motion.len();
        if speaker_audio.len().abs_diff(want) > r - 1 {
            return Err(Error::shape("DyadSample::new audio", &[speaker_audio.len()], &[want]));
        }
        Ok(Self {
            id: id.into(),
            speaker_motion,
            speaker_audio,
            listener_motion,
        })
    }

    pub fn len(&self) -> usize {
        self.speaker_motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Subtracts the per-sequence mean head rotation and re-wraps each angle.
pub fn normalize_rest_pose(seq: &MotionSequence) -> Result<MotionSequence> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("rest-pose normalization of an empty sequence".into()));
    }
    let d = seq.expression_dim();
    let w = seq.frame_dim();
    let n = seq.len() as f64;
    let mut mean = [0f64; 3];
    for t in 0..seq.len() {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += seq.row(t)[d + c] as f64;
        }
    }
    let mut out = seq.clone();
    for row in out.data.chunks_mut(w) {
        for (c, m) in mean.iter().enumerate() {
            row[d + c] = wrap_angle((row[d + c] as f64 - m / n) as f32);
        }
    }
    Ok(out)
}

/// Per-coefficient expression standardization stored with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardization {
    /// Fits over the expression channels of every given sequence.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            let d = s.expression_dim();
            if sum.is_empty() {
                sum = vec![0.0; d];
                sq = vec![0.0; d];
            } else if sum.len() != d {
                return Err(Error::shape("Standardization::fit", &[sum.len()], &[d]));
            }
            for t in 0..s.len() {
                for (c, &v) in s.expression(t).iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            n += s.len();
        }
        if n == 0 {
            return Err(Error::EmptyInput("no frames to fit standardization".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var.sqrt() < 1e-6 {
                    1.0
                } else {
                    var.sqrt() as f32
                }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn check(&self, seq: &MotionSequence) -> Result<()> {
        if seq.expression_dim() != self.mean.len() {
            return Err(Error::shape("Standardization", &[self.mean.len()], &[seq.expression_dim()]));
        }
        Ok(())
    }

    pub fn apply(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        let d = seq.expression_dim();
        let mut out = seq.clone();
        for row in out.data.chunks_mut(d + ROTATION_DIM) {
            for c in 0..d {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        let d = seq.expression_dim();
        let mut out = seq.clone();
        for row in out.data.chunks_mut(d + ROTATION_DIM) {
            for c in 0..d {
                row[c] = row[c] * self.std[c] + self.mean[c];
            }
        }
        Ok(out)
    }

    pub fn apply_sample(&self, s: &DyadSample) -> Result<DyadSample> {
        Ok(DyadSample {
            id: s.id.clone(),
            speaker_motion: self.apply(&s.speaker_motion)?,
            speaker_audio: s.speaker_audio.clone(),
            listener_motion: self.apply(&s.listener_motion)?,
        })
    }
}

/// Aligned slice of all three streams; the audio slice is `rate_multiple`
/// times longer and zero-padded if the source audio runs short.
pub fn window(sample: &DyadSample, start: usize, len: usize) -> Result<DyadSample> {
    if len == 0 || start + len > sample.len() {
        return Err(Error::Range(format!(
            "window {start}..{} outside a {}-frame sample",
            start + len,
            sample.len()
        )));
    }
    let r = sample.speaker_audio.rate_multiple();
    Ok(DyadSample {
        id: sample.id.clone(),
        speaker_motion: sample.speaker_motion.slice(start, start + len)?,
        speaker_audio: sample.speaker_audio.slice_padded(start * r, (start + len) * r),
        listener_motion: sample.listener_motion.slice(start, start + len)?,
    })
}

/// All windows of `len` frames starting at multiples of `stride`.
pub fn windows(sample: &DyadSample, len: usize, stride: usize) -> Result<Vec<DyadSample>> {
    if stride == 0 {
        return Err(Error::contract("window stride must be positive"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= sample.len() {
        out.push(window(sample, start, len)?);
        start += stride;
    }
    Ok(out)
}

/// Splits one sample into contiguous train/val/test blocks by time, with
/// block boundaries rounded down to multiples of `align` frames. Blocks too
/// short to hold `min_len` frames come back as `None`.
pub fn split_contiguous(
    sample: &DyadSample,
    ratios: [f64; 3],
    align: usize,
    min_len: usize,
) -> Result<[Option<DyadSample>; 3]> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let align = align.max(1);
    let n = sample.len();
    let b1 = ((n as f64 * ratios[0]) as usize) / align * align;
    let b2 = ((n as f64 * (ratios[0] + ratios[1])) as usize) / align * align;
    let bounds = [(0, b1), (b1, b2), (b2, n)];
    let mut out: [Option<DyadSample>; 3] = [None, None, None];
    for (slot, (s, e)) in out.iter_mut().zip(bounds) {
        if e > s && e - s >= min_len.max(1) {
            let mut w = window(sample, s, e - s)?;
            w.id = sample.id.clone();
            *slot = Some(w);
        }
    }
    Ok(out)
}
