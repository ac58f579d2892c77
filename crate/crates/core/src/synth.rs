//! Synthetic source material: harmonic "voices" with syllable envelopes and
//! coloured noise classes. Stands in for speech/noise corpora in tests and
//! demos.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A speaker class: fundamental plus a fixed harmonic amplitude profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneVoice {
    pub f0: f64,
    pub harmonics: Vec<f64>,
    pub syllable_rate: f64,
}

impl ToneVoice {
    pub fn random(rng: &mut impl Rng) -> Self {
        let f0 = rng.gen_range(90.0..320.0);
        let n = rng.gen_range(4..9);
        let tilt: f64 = rng.gen_range(0.4..0.9);
        let harmonics = (0..n).map(|k| tilt.powi(k) * rng.gen_range(0.5..1.0)).collect();
        Self { f0, harmonics, syllable_rate: rng.gen_range(3.0..6.0) }
    }

    /// `len` samples of syllables separated by gaps, silent for
    /// `edge_silence` samples at both ends.
    pub fn utterance<T: Real>(&self, rng: &mut impl Rng, len: usize, sample_rate: u32, edge_silence: usize) -> Waveform<T> {
        let sr = sample_rate as f64;
        let mut out = vec![0.0f64; len];
        let end = len.saturating_sub(edge_silence);
        let mut pos = edge_silence;
        let norm: f64 = self.harmonics.iter().sum::<f64>().max(1e-9);
        while pos < end {
            let dur = ((rng.gen_range(0.6..1.4) / self.syllable_rate) * sr) as usize;
            let dur = dur.min(end - pos);
            let f = self.f0 * rng.gen_range(0.95..1.05);
            let glide = rng.gen_range(-0.08..0.08);
            let amp = rng.gen_range(0.15..0.35) / norm;
            let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut phase = phase0;
            for i in 0..dur {
                let u = i as f64 / dur.max(1) as f64;
                let env = (std::f64::consts::PI * u).sin().powi(2);
                let inst = f * (1.0 + glide * u);
                phase += std::f64::consts::TAU * inst / sr;
                let mut s = 0.0;
                for (k, a) in self.harmonics.iter().enumerate() {
                    let fk = inst * (k + 1) as f64;
                    if fk < 0.5 * sr {
                        s += a * ((k + 1) as f64 * phase).sin();
                    }
                }
                out[pos + i] = amp * env * s;
            }
            pos += dur + (rng.gen_range(0.03..0.12) * sr) as usize;
        }
        Waveform::new(out.into_iter().map(T::of).collect(), sample_rate)
    }
}

/// Background families. Each render draws fresh cutoffs within the family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseClass {
    Low,
    High,
    Band,
    White,
    /// A few narrow resonances at random frequencies.
    Resonant,
}

impl NoiseClass {
    pub const ALL: [NoiseClass; 5] =
        [NoiseClass::Low, NoiseClass::High, NoiseClass::Band, NoiseClass::White, NoiseClass::Resonant];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseClass::Low => "low",
            NoiseClass::High => "high",
            NoiseClass::Band => "band",
            NoiseClass::White => "white",
            NoiseClass::Resonant => "resonant",
        }
    }

    /// Unit-variance white noise shaped by one-pole filters, scaled to `rms`.
    pub fn render<T: Real>(self, rng: &mut impl Rng, len: usize, sample_rate: u32, rms: f64) -> Waveform<T> {
        let white: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lowpass = |x: &[f64], a: f64| {
            let mut y = 0.0;
            x.iter()
                .map(|&v| {
                    y = a * y + (1.0 - a) * v;
                    y
                })
                .collect::<Vec<f64>>()
        };
        let shaped = match self {
            NoiseClass::White => white,
            NoiseClass::Low => lowpass(&white, rng.gen_range(0.85..0.97)),
            NoiseClass::High => {
                let lp = lowpass(&white, rng.gen_range(0.3..0.6));
                white.iter().zip(&lp).map(|(w, l)| w - l).collect()
            }
            NoiseClass::Band => {
                let wide = lowpass(&white, rng.gen_range(0.4..0.6));
                let narrow = lowpass(&wide, rng.gen_range(0.85..0.93));
                wide.iter().zip(&narrow).map(|(a, b)| a - b).collect()
            }
            NoiseClass::Resonant => {
                let sr = sample_rate as f64;
                let mut acc = vec![0.0; len];
                for _ in 0..rng.gen_range(3..7) {
                    let f = rng.gen_range(150.0..0.45 * sr);
                    let r: f64 = (-std::f64::consts::PI * rng.gen_range(20.0..80.0) / sr).exp();
                    let (a1, a2) = (2.0 * r * (std::f64::consts::TAU * f / sr).cos(), -r * r);
                    let g = rng.gen_range(0.3..1.0);
                    let (mut y1, mut y2) = (0.0, 0.0);
                    for (o, &x) in acc.iter_mut().zip(&white) {
                        let y = x + a1 * y1 + a2 * y2;
                        y2 = y1;
                        y1 = y;
                        *o += g * y;
                    }
                }
                acc
            }
        };
        let p = shaped.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let g = if p > 0.0 { rms / p.sqrt() } else { 0.0 };
        Waveform::new(shaped.into_iter().map(|v| T::of(v * g)).collect(), sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthPoolSpec {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub noises_per_class: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub edge_silence_secs: f64,
    pub seed: u64,
}

impl Default for SynthPoolSpec {
    fn default() -> Self {
        Self {
            speakers: 6,
            utterances_per_speaker: 4,
            noises_per_class: 2,
            seconds: 4.0,
            sample_rate: 8000,
            edge_silence_secs: 0.1,
            seed: 0,
        }
    }
}

/// Writes `clean/spkXX/uttYY.wav` and `noise/<class>_ZZ.wav` under `dir`.
pub fn write_synth_pools(dir: impl AsRef<Path>, spec: &SynthPoolSpec) -> Result<()> {
    let dir = dir.as_ref();
    if spec.speakers == 0 || spec.utterances_per_speaker == 0 {
        return Err(Error::invalid("synthetic pool needs at least one speaker and utterance"));
    }
    let len = (spec.seconds * spec.sample_rate as f64).round() as usize;
    let edge = (spec.edge_silence_secs * spec.sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for s in 0..spec.speakers {
        let voice = ToneVoice::random(&mut rng);
        let spk_dir = dir.join("clean").join(format!("spk{s:02}"));
        std::fs::create_dir_all(&spk_dir).map_err(|e| Error::io(&spk_dir, e))?;
        for u in 0..spec.utterances_per_speaker {
            let w: Waveform<f64> = voice.utterance(&mut rng, len, spec.sample_rate, edge);
            write_wav(spk_dir.join(format!("utt{u:02}.wav")), &w)?;
        }
    }
    let noise_dir = dir.join("noise");
    std::fs::create_dir_all(&noise_dir).map_err(|e| Error::io(&noise_dir, e))?;
    for class in NoiseClass::ALL {
        for n in 0..spec.noises_per_class {
            let w: Waveform<f64> = class.render(&mut rng, len, spec.sample_rate, 0.1);
            write_wav(noise_dir.join(format!("{}_{n:02}.wav", class.as_str())), &w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterance_edges_are_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = ToneVoice::random(&mut rng);
        let w: Waveform<f64> = v.utterance(&mut rng, 8000, 8000, 800);
        assert!(w.samples[..800].iter().all(|&s| s == 0.0));
        assert!(w.samples[7200..].iter().all(|&s| s == 0.0));
        assert!(w.power() > 1e-4);
        assert!(w.samples.iter().all(|s| s.abs() < 1.0));
    }

    #[test]
    fn noise_has_requested_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for class in NoiseClass::ALL {
            let w: Waveform<f64> = class.render(&mut rng, 4000, 8000, 0.1);
            assert!((w.power().sqrt() - 0.1).abs() < 1e-12, "{class:?}");
        }
    }

    #[test]
    fn pools_written() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthPoolSpec { speakers: 2, utterances_per_speaker: 2, noises_per_class: 1, seconds: 0.5, ..Default::default() };
        write_synth_pools(dir.path(), &spec).unwrap();
        assert!(dir.path().join("clean/spk01/utt01.wav").exists());
        assert!(dir.path().join("noise/band_00.wav").exists());
    }
}
