//! Log-mel features from raw waveforms.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::motion::{AudioFeatureSequence, DEFAULT_AUDIO_DIM, DEFAULT_RATE_MULTIPLE};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: usize = 16_000;
pub const N_FFT: usize = 1024;
pub const MEL_BINS: usize = DEFAULT_AUDIO_DIM;
const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Samples between feature frames so that features run at
/// `DEFAULT_RATE_MULTIPLE × motion_fps`.
pub fn hop_length(sample_rate: usize, motion_fps: f32) -> usize {
    (sample_rate as f64 / (DEFAULT_RATE_MULTIPLE as f64 * motion_fps as f64)).round() as usize
}

/// Triangular HTK-scale filters over `0..=sr/2`, one row per mel bin.
/// Returns the filters and the bin-edge frequencies in Hz.
pub fn mel_filterbank(sample_rate: usize, n_fft: usize, bins: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_freq = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bins + 2).map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64)).collect();
    let freqs: Vec<f64> = (0..n_freq).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();
    let filters = (0..bins)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            freqs
                .iter()
                .map(|&f| {
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect();
    (filters, edges)
}

/// Log-power mel spectrogram with a Hann window of `N_FFT` samples,
/// reflect-padded so frame `j` is centred on sample `j · hop`.
/// Produces `floor(len / hop)` frames.
pub fn mel_features(waveform: &[f32], sample_rate: usize, motion_fps: f32) -> Result<AudioFeatureSequence> {
    if sample_rate == 0 || !(motion_fps > 0.0) {
        return Err(Error::contract("mel_features needs a positive sample rate and fps"));
    }
    if waveform.len() < N_FFT {
        return Err(Error::EmptyInput(format!(
            "waveform of {} samples is shorter than one {N_FFT}-sample window",
            waveform.len()
        )));
    }
    let hop = hop_length(sample_rate, motion_fps).max(1);
    let frames = waveform.len() / hop;
    let half = N_FFT / 2;
    let n = waveform.len() as isize;
    let reflect = |i: isize| -> f64 {
        let mut j = i;
        if j < 0 {
            j = -j;
        }
        if j >= n {
            j = 2 * (n - 1) - j;
        }
        waveform[j.clamp(0, n - 1) as usize] as f64
    };
    let window: Vec<f64> = (0..N_FFT).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / N_FFT as f64).cos()).collect();
    let (filters, _) = mel_filterbank(sample_rate, N_FFT, MEL_BINS);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0; half + 1];
    let mut out = Vec::with_capacity(frames * MEL_BINS);
    for j in 0..frames {
        let start = (j * hop) as isize - half as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(reflect(start + i as isize) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for f in &filters {
            let e: f64 = f.iter().zip(&power).map(|(a, b)| a * b).sum();
            out.push(e.max(LOG_FLOOR).ln() as f32);
        }
    }
    AudioFeatureSequence::new(MEL_BINS, DEFAULT_RATE_MULTIPLE, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_about_120_frames() {
        let wav = vec![0.0f32; 16_000];
        let m = mel_features(&wav, 16_000, 30.0).unwrap();
        assert_eq!(hop_length(16_000, 30.0), 133);
        assert_eq!(m.len(), 16_000 / 133);
        assert_eq!(m.rate_multiple(), 4);
        assert_eq!(m.feature_dim(), 128);
    }

    #[test]
    fn silence_is_constant_floor() {
        let m = mel_features(&vec![0.0f32; 4000], 16_000, 30.0).unwrap();
        let floor = (LOG_FLOOR).ln() as f32;
        assert!(m.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn short_waveform_is_empty_input() {
        assert!(matches!(mel_features(&[0.1; 100], 16_000, 30.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn tone_peaks_in_its_bin() {
        let sr = 16_000;
        let wav: Vec<f32> = (0..sr).map(|i| (2.0 * PI * 440.0 * i as f64 / sr as f64).sin() as f32).collect();
        let m = mel_features(&wav, sr, 30.0).unwrap();
        let (_, edges) = mel_filterbank(sr, N_FFT, MEL_BINS);
        // bin m covers edges[m]..edges[m+2], peaking at edges[m+1]
        let expected = (0..MEL_BINS)
            .min_by(|&a, &b| {
                (edges[a + 1] - 440.0).abs().partial_cmp(&(edges[b + 1] - 440.0).abs()).unwrap()
            })
            .unwrap();
        let row = m.row(m.len() / 2);
        let argmax = (0..MEL_BINS).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert!(argmax.abs_diff(expected) <= 1, "{argmax} vs {expected}");
    }
}
