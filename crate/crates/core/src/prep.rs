//! Acoustic pre-processing: enrollment compensation, classical noise
//! suppressors, and SNR-controlled mixing.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dsp::{Spectrogram, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Length of the optional linear cross-fade between repeats.
pub const DAC_CROSSFADE: usize = 8;

/// Dynamic acoustic compensation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DacConfig {
    /// Leading frames of the noisy input taken as background.
    pub j_frames: usize,
    /// Trailing frames of the noisy input taken as background.
    pub k_frames: usize,
    /// Samples per frame.
    pub hop: usize,
    #[serde(default)]
    pub crossfade: bool,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self { j_frames: 4, k_frames: 2, hop: 128, crossfade: false }
    }
}

impl DacConfig {
    pub fn new(j_frames: usize, k_frames: usize, hop: usize) -> Self {
        Self { j_frames, k_frames, hop, crossfade: false }
    }

    pub fn base_len(&self) -> usize {
        (self.j_frames + self.k_frames) * self.hop
    }

    fn validate(&self, noisy_len: usize) -> Result<()> {
        if self.j_frames + self.k_frames == 0 || self.hop == 0 {
            return Err(Error::invalid("DAC needs at least one intercepted frame"));
        }
        if self.base_len() > noisy_len {
            return Err(Error::invalid(format!(
                "DAC({}/{}) intercepts {} samples but the noisy input has only {}",
                self.j_frames,
                self.k_frames,
                self.base_len(),
                noisy_len
            )));
        }
        Ok(())
    }
}

/// Head and tail of `noisy` concatenated: the background estimate DAC tiles.
pub fn dac_base<T: Real>(noisy: &Waveform<T>, cfg: &DacConfig) -> Result<Waveform<T>> {
    cfg.validate(noisy.len())?;
    let head = cfg.j_frames * cfg.hop;
    let tail = cfg.k_frames * cfg.hop;
    let mut samples = Vec::with_capacity(head + tail);
    samples.extend_from_slice(&noisy.samples[..head]);
    samples.extend_from_slice(&noisy.samples[noisy.len() - tail..]);
    Ok(Waveform::new(samples, noisy.sample_rate))
}

/// Compensates a clean enrollment with the edge background of `noisy`.
pub fn dac<T: Real>(enroll: &Waveform<T>, noisy: &Waveform<T>, cfg: &DacConfig) -> Result<Waveform<T>> {
    enroll.ensure_same_rate(noisy)?;
    let base = dac_base(noisy, cfg)?;
    add_tiled(enroll, &base, cfg.crossfade)
}

/// `enroll + repeat(noise)` truncated to the enrollment length.
///
/// This is the injection point for an oracle noise track (the upper bound
/// where the true background replaces the intercepted edges).
pub fn add_tiled<T: Real>(enroll: &Waveform<T>, noise: &Waveform<T>, crossfade: bool) -> Result<Waveform<T>> {
    enroll.ensure_same_rate(noise)?;
    if enroll.is_empty() {
        return Err(Error::invalid("empty enrollment"));
    }
    if noise.is_empty() {
        return Err(Error::invalid("empty noise base"));
    }
    let tiled = if crossfade && noise.len() > 2 * DAC_CROSSFADE {
        tile_crossfaded(&noise.samples, enroll.len())
    } else {
        noise.samples.iter().copied().cycle().take(enroll.len()).collect()
    };
    let samples = enroll.samples.iter().zip(tiled).map(|(&s, n)| s + n).collect();
    Ok(Waveform::new(samples, enroll.sample_rate))
}

// Consecutive repeats overlap by DAC_CROSSFADE samples with linear ramps.
fn tile_crossfaded<T: Real>(base: &[T], len: usize) -> Vec<T> {
    let fade = DAC_CROSSFADE;
    let step = base.len() - fade;
    let mut out = vec![T::zero(); len + base.len()];
    let mut start = 0;
    let mut first = true;
    while start < len {
        for (i, &b) in base.iter().enumerate() {
            let gain = if !first && i < fade {
                T::of_usize(i + 1) / T::of_usize(fade + 1)
            } else if i >= step {
                T::one() - T::of_usize(i - step + 1) / T::of_usize(fade + 1)
            } else {
                T::one()
            };
            out[start + i] = out[start + i] + gain * b;
        }
        first = false;
        start += step;
    }
    out.truncate(len);
    out
}

/// Spectral subtraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsParams {
    pub j_frames: usize,
    pub k_frames: usize,
    /// Over-subtraction factor, ≥ 1.
    pub alpha: f64,
    /// Spectral floor relative to the noisy magnitude, in (0, 1).
    pub beta: f64,
}

impl Default for SsParams {
    fn default() -> Self {
        Self { j_frames: 4, k_frames: 0, alpha: 1.0, beta: 0.01 }
    }
}

/// Mean magnitude per bin over the first `j` and last `k` frames.
pub fn edge_noise_profile<T: Real>(spec: &Spectrogram<T>, j_frames: usize, k_frames: usize) -> Result<Vec<T>> {
    if j_frames + k_frames == 0 {
        return Err(Error::invalid("noise profile needs at least one frame"));
    }
    if j_frames + k_frames > spec.num_frames {
        return Err(Error::invalid(format!(
            "{} edge frames requested from a {}-frame spectrogram",
            j_frames + k_frames,
            spec.num_frames
        )));
    }
    let frames: Vec<usize> = (0..j_frames).chain(spec.num_frames - k_frames..spec.num_frames).collect();
    let count = T::of_usize(frames.len());
    Ok((0..spec.num_bins())
        .map(|f| frames.iter().map(|&t| spec.get(t, f).norm()).sum::<T>() / count)
        .collect())
}

/// Spectral subtraction on a spectrogram, keeping the noisy phase.
pub fn spectral_subtract_spec<T: Real>(spec: &Spectrogram<T>, params: &SsParams) -> Result<Spectrogram<T>> {
    if params.alpha < 1.0 {
        return Err(Error::invalid(format!("alpha {} must be ≥ 1", params.alpha)));
    }
    if !(params.beta > 0.0 && params.beta < 1.0) {
        return Err(Error::invalid(format!("beta {} must lie in (0, 1)", params.beta)));
    }
    let profile = edge_noise_profile(spec, params.j_frames, params.k_frames)?;
    let alpha = T::of(params.alpha);
    let beta = T::of(params.beta);
    let nb = spec.num_bins();
    let mut out = spec.clone();
    for (i, bin) in out.bins.iter_mut().enumerate() {
        let mag = bin.norm();
        if mag.is_zero() {
            continue;
        }
        let enhanced = (mag - alpha * profile[i % nb]).max(beta * mag);
        *bin = *bin * (enhanced / mag);
    }
    Ok(out)
}

pub fn spectral_subtract<T: Real>(noisy: &Waveform<T>, params: &SsParams, cfg: StftConfig) -> Result<Waveform<T>> {
    let engine = Stft::new(cfg)?;
    let spec = engine.analyze(noisy)?;
    engine.synthesize(&spectral_subtract_spec(&spec, params)?)
}

/// MMSE log-spectral-amplitude parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsaParams {
    /// Leading frames used for the noise power estimate.
    pub j_frames: usize,
    /// Decision-directed smoothing factor.
    pub dd_alpha: f64,
    /// A-priori SNR floor (linear).
    pub xi_min: f64,
}

impl Default for LsaParams {
    fn default() -> Self {
        Self { j_frames: 4, dd_alpha: 0.98, xi_min: 10f64.powf(-2.5) }
    }
}

/// Exponential integral `E₁(x) = ∫ₓ^∞ e^{-t}/t dt` for `x > 0`.
pub fn exp_int_e1<T: Real>(x: T) -> T {
    if x <= T::zero() {
        return T::infinity();
    }
    let eps = T::epsilon();
    if x <= T::one() {
        // Power series: -γ - ln x - Σ (-x)^k / (k·k!)
        let euler = T::of(0.577_215_664_901_532_9);
        let mut sum = T::zero();
        let mut term = T::one();
        for k in 1..200 {
            term = term * (-x) / T::of_usize(k);
            let add = term / T::of_usize(k);
            sum = sum + add;
            if add.abs() < eps * sum.abs().max(eps) {
                break;
            }
        }
        -euler - x.ln() - sum
    } else {
        // Continued fraction, modified Lentz.
        let tiny = T::min_positive_value() / eps;
        let mut b = x + T::one();
        let mut c = T::one() / tiny;
        let mut d = T::one() / b;
        let mut h = d;
        for i in 1..200 {
            let an = -T::of_usize(i * i);
            b = b + T::of(2.0);
            d = T::one() / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h = h * del;
            if (del - T::one()).abs() < eps {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Log-spectral-amplitude gain `ξ/(1+ξ)·exp(½E₁(v))`, `v = γξ/(1+ξ)`, capped at 1.
///
/// The uncapped expression exceeds 1 for small `γ`.
pub fn lsa_gain<T: Real>(xi: T, gamma: T) -> T {
    let ratio = xi / (T::one() + xi);
    let v = ratio * gamma;
    (ratio * (T::of(0.5) * exp_int_e1(v)).exp()).min(T::one())
}

pub fn mmse_lsa_spec<T: Real>(spec: &Spectrogram<T>, params: &LsaParams) -> Result<Spectrogram<T>> {
    if params.j_frames == 0 {
        return Err(Error::invalid("MMSE-LSA needs at least one noise frame"));
    }
    if params.j_frames > spec.num_frames {
        return Err(Error::invalid(format!(
            "{} noise frames requested from a {}-frame spectrogram",
            params.j_frames, spec.num_frames
        )));
    }
    let nb = spec.num_bins();
    let floor = T::of(1e-12);
    let count = T::of_usize(params.j_frames);
    let noise_power: Vec<T> = (0..nb)
        .map(|f| ((0..params.j_frames).map(|t| spec.get(t, f).norm_sqr()).sum::<T>() / count).max(floor))
        .collect();
    let dd = T::of(params.dd_alpha);
    let xi_min = T::of(params.xi_min);
    let mut prev_clean_snr: Option<Vec<T>> = None;
    let mut out = spec.clone();
    for t in 0..spec.num_frames {
        let mut clean_snr = vec![T::zero(); nb];
        for f in 0..nb {
            let y = spec.get(t, f);
            let gamma = (y.norm_sqr() / noise_power[f]).max(floor);
            let ml = (gamma - T::one()).max(T::zero());
            let xi = match &prev_clean_snr {
                Some(prev) => dd * prev[f] + (T::one() - dd) * ml,
                None => ml,
            }
            .max(xi_min);
            let g = lsa_gain(xi, gamma);
            clean_snr[f] = g * g * gamma;
            *out.get_mut(t, f) = y * g;
        }
        prev_clean_snr = Some(clean_snr);
    }
    Ok(out)
}

pub fn mmse_lsa<T: Real>(noisy: &Waveform<T>, params: &LsaParams, cfg: StftConfig) -> Result<Waveform<T>> {
    let engine = Stft::new(cfg)?;
    let spec = engine.analyze(noisy)?;
    engine.synthesize(&mmse_lsa_spec(&spec, params)?)
}

/// Scales `noise` so that the speech-to-noise power ratio equals `snr_db`.
///
/// Power is the mean square over the whole signal. Returns the mixture and
/// the scaled noise.
pub fn mix_at_snr<T: Real>(speech: &Waveform<T>, noise: &Waveform<T>, snr_db: f64) -> Result<(Waveform<T>, Waveform<T>)> {
    speech.ensure_same_rate(noise)?;
    if speech.len() != noise.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {} samples", speech.len(), noise.len())));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr_db must be finite"));
    }
    let p_speech = speech.power();
    let p_noise = noise.power();
    if p_speech.is_zero() {
        return Err(Error::invalid("speech is all zeros"));
    }
    if p_noise.is_zero() {
        return Err(Error::invalid("noise is all zeros; cannot reach a finite SNR"));
    }
    let gain = (p_speech / (p_noise * T::of(10f64.powf(snr_db / 10.0)))).sqrt();
    let scaled: Vec<T> = noise.samples.iter().map(|&n| n * gain).collect();
    let mixture = speech.samples.iter().zip(&scaled).map(|(&s, &n)| s + n).collect();
    Ok((Waveform::new(mixture, speech.sample_rate), Waveform::new(scaled, speech.sample_rate)))
}

/// `10·log10(P_speech / P_noise)`.
pub fn snr_db<T: Real>(speech: &Waveform<T>, noise: &Waveform<T>) -> f64 {
    10.0 * (speech.power().to_f64_lossy() / noise.power().to_f64_lossy()).log10()
}
