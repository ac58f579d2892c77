//! Training objectives with analytic gradients.
//!
//! Spectrogram gradients hold `∂L/∂Re + i·∂L/∂Im` per stored bin.

use std::io::Write;
use std::path::Path;

use crate::dsp::{Spectrogram, Stft};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, dot, mean, Real};

/// Magnitude cap on the SISNR in dB.
pub const SISNR_CAP_DB: f64 = 60.0;

/// Batch-spread threshold below which the focal weighting falls back to the mean.
pub const AFT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SisnrLoss<T> {
    /// Negative SISNR in dB, within ±60.
    pub loss: T,
    pub grad: Vec<T>,
    pub capped: bool,
}

fn centered<T: Real>(x: &[T]) -> Vec<T> {
    let m = mean(x);
    x.iter().map(|&v| v - m).collect()
}

/// Negative scale-invariant SNR and its gradient with respect to `est`.
pub fn neg_sisnr<T: Real>(est: &[T], reference: &[T]) -> Result<SisnrLoss<T>> {
    if est.len() != reference.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {} samples", est.len(), reference.len())));
    }
    if est.len() < 2 {
        return Err(Error::invalid("SISNR needs at least two samples"));
    }
    if est.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SISNR input".into()));
    }
    let e = centered(est);
    let r = centered(reference);
    let ref_energy = dot(&r, &r);
    if ref_energy <= T::zero() {
        return Err(Error::invalid("reference is constant (zero after mean removal)"));
    }
    let alpha = dot(&e, &r) / ref_energy;
    let noise: Vec<T> = e.iter().zip(&r).map(|(&ev, &rv)| ev - alpha * rv).collect();
    let signal_energy = alpha * alpha * ref_energy;
    let noise_energy = dot(&noise, &noise);

    let cap = T::of(SISNR_CAP_DB);
    let ratio_cap = T::of(10f64.powf(SISNR_CAP_DB / 10.0));
    let zero_grad = || vec![T::zero(); est.len()];
    if noise_energy * ratio_cap <= signal_energy {
        return Ok(SisnrLoss { loss: -cap, grad: zero_grad(), capped: true });
    }
    if signal_energy * ratio_cap <= noise_energy {
        return Ok(SisnrLoss { loss: cap, grad: zero_grad(), capped: true });
    }
    let db = T::of(10.0) / T::LN_10();
    let loss = -db * (signal_energy / noise_energy).ln();
    // dS/de = 2αr, dN/de = 2n; both are already zero-mean.
    let two = T::of(2.0);
    let grad = r
        .iter()
        .zip(&noise)
        .map(|(&rv, &nv)| -db * (two * alpha * rv / signal_energy - two * nv / noise_energy))
        .collect();
    Ok(SisnrLoss { loss, grad, capped: false })
}

/// SISNR in dB (the sign-flipped loss, same cap).
pub fn sisnr_db<T: Real>(est: &[T], reference: &[T]) -> Result<T> {
    Ok(-neg_sisnr(est, reference)?.loss)
}

#[derive(Debug, Clone)]
pub struct MseLoss<T> {
    pub loss: T,
    pub grad: Spectrogram<T>,
}

/// Mean squared complex error over the full (symmetry-weighted) spectrum.
pub fn mse_freq<T: Real>(est: &Spectrogram<T>, reference: &Spectrogram<T>) -> Result<MseLoss<T>> {
    est.ensure_same_geometry(reference)?;
    let nb = est.num_bins();
    let count = T::of_usize(est.num_frames * est.config.fft_size);
    let two = T::of(2.0);
    let mut grad = est.clone();
    let mut terms = Vec::with_capacity(est.bins.len());
    for (i, ((g, a), b)) in grad.bins.iter_mut().zip(&est.bins).zip(&reference.bins).enumerate() {
        let w = T::of_usize(est.config.bin_weight(i % nb));
        let d = *a - *b;
        terms.push(w * d.norm_sqr());
        *g = d * (two * w / count);
    }
    let loss = compensated_sum(terms) / count;
    if !loss.is_finite() {
        return Err(Error::NonFinite("frequency MSE".into()));
    }
    Ok(MseLoss { loss, grad })
}

#[derive(Debug, Clone)]
pub struct TfLoss<T> {
    /// `neg_sisnr + mse_freq`.
    pub loss: T,
    pub neg_sisnr: T,
    pub mse: T,
    /// Gradient with respect to the estimated spectrogram.
    pub grad: Spectrogram<T>,
}

/// Combined time/frequency loss. `est_wave` must be the synthesis of `est_spec`.
pub fn tf_loss<T: Real>(
    stft: &Stft<T>,
    est_spec: &Spectrogram<T>,
    ref_spec: &Spectrogram<T>,
    est_wave: &Waveform<T>,
    ref_wave: &Waveform<T>,
) -> Result<TfLoss<T>> {
    let sisnr = neg_sisnr(&est_wave.samples, &ref_wave.samples)?;
    let mse = mse_freq(est_spec, ref_spec)?;
    let pulled = stft.pullback(&Waveform::new(sisnr.grad, est_wave.sample_rate), est_spec.geometry())?;
    let mut grad = mse.grad;
    for (g, p) in grad.bins.iter_mut().zip(&pulled.bins) {
        *g = *g + *p;
    }
    Ok(TfLoss { loss: sisnr.loss + mse.loss, neg_sisnr: sisnr.loss, mse: mse.loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AftOptions {
    /// Clamp z-scores to [-1, 1] before the sine.
    pub clamp: bool,
    pub eps: f64,
}

impl Default for AftOptions {
    fn default() -> Self {
        Self { clamp: true, eps: AFT_EPS }
    }
}

/// Per-batch record of the adaptive focal weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossReport<T> {
    pub per_sample_tf: Vec<T>,
    pub mu: T,
    /// Population standard deviation.
    pub sigma: T,
    pub weights: Vec<T>,
    pub aggregate: T,
    /// True when `sigma < eps` and the aggregate is the plain mean.
    pub fallback: bool,
    /// `∂aggregate/∂L_TF^i`, weights held constant.
    pub coefficients: Vec<T>,
}

/// Adaptive focal aggregate `Σ sin(π/2·z_i)·L_i` over a batch.
pub fn aft_loss<T: Real>(per_sample_tf: &[T], opts: AftOptions) -> Result<BatchLossReport<T>> {
    let batch = per_sample_tf.len();
    if batch < 2 {
        return Err(Error::invalid(format!("focal weighting needs a batch of at least 2, got {batch}")));
    }
    if let Some(i) = per_sample_tf.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("per-sample loss {i}")));
    }
    let b = T::of_usize(batch);
    let mu = mean(per_sample_tf);
    let var = compensated_sum(per_sample_tf.iter().map(|&l| (l - mu) * (l - mu))) / b;
    let sigma = var.sqrt();
    if sigma < T::of(opts.eps) {
        return Ok(BatchLossReport {
            per_sample_tf: per_sample_tf.to_vec(),
            mu,
            sigma,
            weights: vec![T::zero(); batch],
            aggregate: mu,
            fallback: true,
            coefficients: vec![T::one() / b; batch],
        });
    }
    let half_pi = T::FRAC_PI_2();
    let weights: Vec<T> = per_sample_tf
        .iter()
        .map(|&l| {
            let z = (l - mu) / sigma;
            let z = if opts.clamp { z.max(-T::one()).min(T::one()) } else { z };
            (half_pi * z).sin()
        })
        .collect();
    let aggregate = compensated_sum(weights.iter().zip(per_sample_tf).map(|(&w, &l)| w * l));
    Ok(BatchLossReport {
        per_sample_tf: per_sample_tf.to_vec(),
        mu,
        sigma,
        coefficients: weights.clone(),
        weights,
        aggregate,
        fallback: false,
    })
}

impl<T: Real> BatchLossReport<T> {
    pub fn len(&self) -> usize {
        self.per_sample_tf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sample_tf.is_empty()
    }

    /// `Σ coefficient_i · grad_i` over flat per-sample gradients.
    pub fn combine(&self, grads: &[Vec<T>]) -> Result<Vec<T>> {
        if grads.len() != self.len() {
            return Err(Error::invalid(format!("{} gradients for a batch of {}", grads.len(), self.len())));
        }
        let dim = grads.first().map_or(0, Vec::len);
        let mut out = vec![T::zero(); dim];
        for (c, g) in self.coefficients.iter().zip(grads) {
            if g.len() != dim {
                return Err(Error::invalid("per-sample gradients differ in length"));
            }
            for (o, &v) in out.iter_mut().zip(g) {
                *o = *o + *c * v;
            }
        }
        Ok(out)
    }

    /// `sample_id,l_tf,weight` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(out, "sample_id,l_tf,weight").map_err(io)?;
        for (i, (l, w)) in self.per_sample_tf.iter().zip(&self.weights).enumerate() {
            let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
            writeln!(out, "{id},{l},{w}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
