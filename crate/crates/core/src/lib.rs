pub mod audio;
pub mod dsp;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod model;
pub mod prep;
pub mod scalar;
pub mod simulator;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Waveform64 = audio::Waveform<f64>;
pub type Waveform32 = audio::Waveform<f32>;
pub type Spectrogram64 = dsp::Spectrogram<f64>;
pub type Spectrogram32 = dsp::Spectrogram<f32>;
pub type Stft64 = dsp::Stft<f64>;
pub type Stft32 = dsp::Stft<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
pub type BatchLossReport64 = losses::BatchLossReport<f64>;
