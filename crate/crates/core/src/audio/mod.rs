//! Audio and manifest I/O.

mod manifest;
mod wav;

pub use manifest::{load_manifest, save_manifest, Condition, Manifest, MixtureRecord};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![T::zero(); len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square over the whole signal.
    pub fn power(&self) -> T {
        if self.samples.is_empty() {
            return T::zero();
        }
        crate::scalar::dot(&self.samples, &self.samples) / T::of_usize(self.samples.len())
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|s| s.is_zero())
    }

    pub fn cast<U: Real>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|s| U::of(s.to_f64_lossy())).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Loops the signal (or truncates it) to exactly `len` samples.
    pub fn looped_to(&self, len: usize) -> Waveform<T> {
        let samples = if self.samples.is_empty() {
            vec![T::zero(); len]
        } else {
            self.samples.iter().copied().cycle().take(len).collect()
        };
        Waveform { samples, sample_rate: self.sample_rate }
    }

    pub(crate) fn ensure_same_rate(&self, other: &Waveform<T>) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::invalid(format!(
                "sample rate mismatch: {} Hz vs {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{what}: sample {i}")));
        }
        Ok(())
    }
}
