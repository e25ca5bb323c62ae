//! Motion and audio containers, the dataset file, synthetic dyads and mel
//! features.

mod dyad_file;
mod mel;
mod motion;
pub mod synth;

pub use dyad_file::{read_dyad_file, write_dyad_file, DyadDataset, ExpectedDims};
pub use mel::{hop_length, hz_to_mel, mel_features, mel_filterbank, mel_to_hz, DEFAULT_SAMPLE_RATE, MEL_BINS, N_FFT};
pub use motion::{
    normalize_rest_pose, split_contiguous, window, windows, wrap_angle, AudioFeatureSequence, DyadSample,
    FacialFrame, MotionSequence, Standardization, DEFAULT_AUDIO_DIM, DEFAULT_EXPRESSION_DIM, DEFAULT_FPS,
    DEFAULT_RATE_MULTIPLE, PITCH, ROTATION_DIM,
};
pub use synth::{synth_dyad, DyadSynth, SynthConfig, SynthLabel};
