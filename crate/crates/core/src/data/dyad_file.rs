//! The `DYAD` dataset file.
//!
//! ```text
//! b"DYAD" | version: u16 LE | header_len: u32 LE | header (UTF-8 JSON) | sample blocks
//! ```
//!
//! The header records `d_m`, `d_a`, `fps`, `rate_multiple`, the optional
//! expression standardization vectors, the sample count, and for each sample
//! its id, byte offset (relative to the first block), motion length and audio
//! length. Each block holds little-endian `f32` data for speaker motion,
//! speaker audio and listener motion, in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::motion::{AudioFeatureSequence, DyadSample, MotionSequence, Standardization, ROTATION_DIM};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DYAD";
const VERSION: u16 = 1;
const PREAMBLE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DyadDataset {
    pub expression_dim: usize,
    pub audio_dim: usize,
    pub fps: f32,
    pub rate_multiple: usize,
    pub standardization: Option<Standardization>,
    pub samples: Vec<DyadSample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    d_m: usize,
    d_a: usize,
    fps: f32,
    rate_multiple: usize,
    standardization: Option<Standardization>,
    sample_count: usize,
    samples: Vec<SampleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    offset: u64,
    motion_len: usize,
    audio_len: usize,
}

/// Expected dimensions when reading under a given configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectedDims {
    pub expression_dim: usize,
    pub audio_dim: usize,
}

impl DyadDataset {
    pub fn new(samples: Vec<DyadSample>, standardization: Option<Standardization>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptyInput("dataset without samples".into()))?;
        let ds = Self {
            expression_dim: first.speaker_motion.expression_dim(),
            audio_dim: first.speaker_audio.feature_dim(),
            fps: first.speaker_motion.fps(),
            rate_multiple: first.speaker_audio.rate_multiple(),
            standardization,
            samples,
        };
        ds.check_uniform()?;
        Ok(ds)
    }

    fn check_uniform(&self) -> Result<()> {
        for s in &self.samples {
            if s.speaker_motion.expression_dim() != self.expression_dim
                || s.listener_motion.expression_dim() != self.expression_dim
            {
                return Err(Error::shape(
                    "DyadDataset",
                    &[self.expression_dim],
                    &[s.speaker_motion.expression_dim()],
                ));
            }
            if s.speaker_audio.feature_dim() != self.audio_dim || s.speaker_audio.rate_multiple() != self.rate_multiple {
                return Err(Error::shape("DyadDataset", &[self.audio_dim], &[s.speaker_audio.feature_dim()]));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_uniform()?;
        let mut blocks: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            entries.push(SampleEntry {
                id: s.id.clone(),
                offset: blocks.len() as u64,
                motion_len: s.len(),
                audio_len: s.speaker_audio.len(),
            });
            for v in s
                .speaker_motion
                .as_slice()
                .iter()
                .chain(s.speaker_audio.as_slice())
                .chain(s.listener_motion.as_slice())
            {
                blocks.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            d_m: self.expression_dim,
            d_a: self.audio_dim,
            fps: self.fps,
            rate_multiple: self.rate_multiple,
            standardization: self.standardization.clone(),
            sample_count: self.samples.len(),
            samples: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format(PREAMBLE as u64, e.to_string()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + blocks.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blocks);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], expected: Option<ExpectedDims>) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "missing DYAD magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported DYAD version {version}")));
        }
        let hlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let hbytes = bytes
            .get(PREAMBLE..PREAMBLE + hlen)
            .ok_or_else(|| Error::format(6, format!("header length {hlen} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(hbytes).map_err(|e| {
            // header JSON is written on one line, so the column is a byte offset
            Error::format((PREAMBLE + e.column().saturating_sub(1)) as u64, format!("bad header: {e}"))
        })?;
        if let Some(exp) = expected {
            if exp.expression_dim != header.d_m {
                return Err(Error::format(
                    PREAMBLE as u64,
                    format!("file has d_m={} but configuration expects d_m={}", header.d_m, exp.expression_dim),
                ));
            }
            if exp.audio_dim != header.d_a {
                return Err(Error::format(
                    PREAMBLE as u64,
                    format!("file has d_a={} but configuration expects d_a={}", header.d_a, exp.audio_dim),
                ));
            }
        }
        if header.sample_count != header.samples.len() {
            return Err(Error::format(
                PREAMBLE as u64,
                format!("sample_count {} but {} entries", header.sample_count, header.samples.len()),
            ));
        }
        if let Some(st) = &header.standardization {
            if st.mean.len() != header.d_m || st.std.len() != header.d_m {
                return Err(Error::format(PREAMBLE as u64, "standardization vectors do not match d_m"));
            }
        }
        let base = PREAMBLE + hlen;
        let width = header.d_m + ROTATION_DIM;
        let mut samples = Vec::with_capacity(header.samples.len());
        for e in &header.samples {
            let n_motion = e.motion_len * width;
            let n_audio = e.audio_len * header.d_a;
            let n = 2 * n_motion + n_audio;
            let start = base + e.offset as usize;
            let raw = bytes.get(start..start + 4 * n).ok_or_else(|| {
                Error::format(start as u64, format!("sample `{}` truncated", e.id))
            })?;
            let vals: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let wrap = |r: Result<DyadSample>| r.map_err(|err| Error::format(start as u64, err.to_string()));
            let sample = wrap((|| {
                let sm = MotionSequence::new(header.d_m, header.fps, vals[..n_motion].to_vec())?;
                let sa = AudioFeatureSequence::new(header.d_a, header.rate_multiple, vals[n_motion..n_motion + n_audio].to_vec())?;
                let lm = MotionSequence::new(header.d_m, header.fps, vals[n_motion + n_audio..].to_vec())?;
                DyadSample::new(e.id.clone(), sm, sa, lm)
            })())?;
            samples.push(sample);
        }
        Ok(Self {
            expression_dim: header.d_m,
            audio_dim: header.d_a,
            fps: header.fps,
            rate_multiple: header.rate_multiple,
            standardization: header.standardization,
            samples,
        })
    }
}

pub fn write_dyad_file(dataset: &DyadDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_dyad_file(path: impl AsRef<Path>, expected: Option<ExpectedDims>) -> Result<DyadDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DyadDataset::from_bytes(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{DyadSynth, SynthConfig};

    fn dataset(n: usize) -> DyadDataset {
        let synth = DyadSynth::new(SynthConfig {
            expression_dim: 6,
            audio_dim: 5,
            ..SynthConfig::default()
        });
        let samples = (0..n).map(|i| synth.sample(i as u64, 64).unwrap()).collect();
        DyadDataset::new(samples, Some(Standardization::identity(6))).unwrap()
    }

    #[test]
    fn round_trip_ten_samples() {
        let ds = dataset(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dyad");
        write_dyad_file(&ds, &path).unwrap();
        let back = read_dyad_file(&path, None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_fails_without_partial_result() {
        let bytes = dataset(3).to_bytes().unwrap();
        let err = DyadDataset::from_bytes(&bytes[..bytes.len() - 1], None).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset > PREAMBLE as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let bytes = dataset(1).to_bytes().unwrap();
        let err = DyadDataset::from_bytes(
            &bytes,
            Some(ExpectedDims {
                expression_dim: 10,
                audio_dim: 5,
            }),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d_m=6") && msg.contains("d_m=10"), "{msg}");
    }

    #[test]
    fn malformed_header_reports_offset() {
        let mut bytes = dataset(1).to_bytes().unwrap();
        bytes[PREAMBLE + 3] = b'#';
        match DyadDataset::from_bytes(&bytes, None).unwrap_err() {
            Error::Format { offset, .. } => assert!(offset >= PREAMBLE as u64),
            other => panic!("{other:?}"),
        }
        assert!(matches!(DyadDataset::from_bytes(b"DYAX\x01\x00", None), Err(Error::Format { offset: 0, .. })));
    }
}
