//! STFT analysis/synthesis with a periodic sqrt-Hann window.
//!
//! Frames are centred by reflect-padding `fft_size / 2` samples at both ends.
//! Only the non-negative-frequency half of each frame is stored; every inner
//! product and energy on a [`Spectrogram`] weights interior bins by 2 and the
//! DC/Nyquist bins by 1 so that it equals its full-spectrum value.
//!
//! Synthesis is weighted overlap-add normalised by the summed squared window,
//! which makes `istft(stft(x)) == x` up to rounding for any hop that keeps the
//! normaliser positive. At 512/128 the squared window sums to a constant in
//! the interior.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 512, hop: 128 }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        let cfg = Self { fft_size, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!("fft_size {} must be a power of two ≥ 2", self.fft_size)));
        }
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(Error::invalid(format!("hop {} must divide fft_size {}", self.hop, self.fft_size)));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.fft_size / 2
    }

    /// Frame count for a signal of `len` samples after centre padding.
    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Duration of `n` STFT frames measured in hops.
    pub fn frames_to_samples(&self, n: usize) -> usize {
        n * self.hop
    }

    /// Hermitian-symmetry weight of half-spectrum bin `f`.
    pub fn bin_weight(&self, f: usize) -> usize {
        if f == 0 || f == self.fft_size / 2 {
            1
        } else {
            2
        }
    }
}

impl fmt::Display for StftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sqrt-hann {}/{}", self.fft_size, self.hop)
    }
}

/// Shape of a spectrogram together with the signal length it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecGeometry {
    pub num_frames: usize,
    pub orig_len: usize,
}

/// Half-spectrum STFT, frames × bins in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub bins: Vec<Complex<T>>,
    pub num_frames: usize,
    pub config: StftConfig,
    pub orig_len: usize,
    pub sample_rate: u32,
}

impl<T: Real> Spectrogram<T> {
    pub fn zeros(config: StftConfig, geometry: SpecGeometry, sample_rate: u32) -> Self {
        Self {
            bins: vec![Complex::new(T::zero(), T::zero()); geometry.num_frames * config.num_bins()],
            num_frames: geometry.num_frames,
            config,
            orig_len: geometry.orig_len,
            sample_rate,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn geometry(&self) -> SpecGeometry {
        SpecGeometry { num_frames: self.num_frames, orig_len: self.orig_len }
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> Complex<T> {
        self.bins[t * self.num_bins() + f]
    }

    #[inline]
    pub fn get_mut(&mut self, t: usize, f: usize) -> &mut Complex<T> {
        let nb = self.num_bins();
        &mut self.bins[t * nb + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        let nb = self.num_bins();
        &self.bins[t * nb..(t + 1) * nb]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex<T>] {
        let nb = self.num_bins();
        &mut self.bins[t * nb..(t + 1) * nb]
    }

    pub fn same_geometry(&self, other: &Spectrogram<T>) -> bool {
        self.config == other.config && self.num_frames == other.num_frames && self.orig_len == other.orig_len
    }

    pub(crate) fn ensure_same_geometry(&self, other: &Spectrogram<T>) -> Result<()> {
        if !self.same_geometry(other) {
            return Err(Error::Geometry(format!(
                "{}×{} ({}, len {}) vs {}×{} ({}, len {})",
                self.num_frames,
                self.num_bins(),
                self.config,
                self.orig_len,
                other.num_frames,
                other.num_bins(),
                other.config,
                other.orig_len
            )));
        }
        Ok(())
    }

    fn check_consistent(&self) -> Result<()> {
        self.config.validate()?;
        if self.bins.len() != self.num_frames * self.num_bins() {
            return Err(Error::Geometry(format!(
                "{} bins stored for {} frames of {} bins",
                self.bins.len(),
                self.num_frames,
                self.num_bins()
            )));
        }
        if self.num_frames != self.config.num_frames(self.orig_len) {
            return Err(Error::Geometry(format!(
                "{} frames cannot come from a {}-sample signal ({} expected)",
                self.num_frames,
                self.orig_len,
                self.config.num_frames(self.orig_len)
            )));
        }
        Ok(())
    }

    /// Weighted real inner product `Σ w_f Re(a · conj(b))`.
    pub fn inner(&self, other: &Spectrogram<T>) -> T {
        let nb = self.num_bins();
        let mut acc = CompensatedSum::new();
        for (i, (a, b)) in self.bins.iter().zip(&other.bins).enumerate() {
            let w = T::of_usize(self.config.bin_weight(i % nb));
            acc.add(w * (a.re * b.re + a.im * b.im));
        }
        acc.value()
    }

    /// Full-spectrum energy `Σ w_f |X|²`.
    pub fn energy(&self) -> T {
        self.inner(self)
    }

    pub fn scale(&self, a: T) -> Spectrogram<T> {
        let mut out = self.clone();
        out.bins.iter_mut().for_each(|b| *b = *b * a);
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: T, other: &Spectrogram<T>, b: T) -> Result<Spectrogram<T>> {
        self.ensure_same_geometry(other)?;
        let mut out = self.clone();
        for (o, y) in out.bins.iter_mut().zip(&other.bins) {
            *o = *o * a + *y * b;
        }
        Ok(out)
    }

    pub fn magnitudes(&self) -> Vec<T> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    /// Debug dump: `frame,bin,re,im` per row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "frame,bin,re,im").map_err(io)?;
        for t in 0..self.num_frames {
            for (f, c) in self.frame(t).iter().enumerate() {
                writeln!(out, "{t},{f},{},{}", c.re, c.im).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }
}

/// Planned STFT engine for one configuration.
#[derive(Clone)]
pub struct Stft<T: Real> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

/// Periodic sqrt-Hann window of length `n`.
pub fn sqrt_hann<T: Real>(n: usize) -> Vec<T> {
    let two_pi = T::PI() + T::PI();
    let len = T::of_usize(n);
    (0..n)
        .map(|i| {
            let hann = T::of(0.5) - T::of(0.5) * (two_pi * T::of_usize(i) / len).cos();
            hann.max(T::zero()).sqrt()
        })
        .collect()
}

/// Index into `0..len` for a reflect-padded position (edge sample not repeated).
fn reflect_index(pos: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = pos.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: sqrt_hann(config.fft_size),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Summed squared window at each position of the padded signal.
    fn overlap_norm(&self, num_frames: usize) -> Vec<T> {
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let mut norm = vec![T::zero(); (num_frames - 1) * hop + n];
        for t in 0..num_frames {
            for (m, &g) in self.window.iter().enumerate() {
                norm[t * hop + m] = norm[t * hop + m] + g * g;
            }
        }
        norm
    }

    /// Windowed frame `t` of the reflect-padded signal.
    pub fn windowed_frame(&self, samples: &[T], t: usize) -> Vec<T> {
        let pad = self.config.pad() as isize;
        let start = (t * self.config.hop) as isize - pad;
        self.window
            .iter()
            .enumerate()
            .map(|(m, &g)| g * samples[reflect_index(start + m as isize, samples.len())])
            .collect()
    }

    pub fn analyze(&self, w: &Waveform<T>) -> Result<Spectrogram<T>> {
        if w.is_empty() {
            return Err(Error::invalid("stft of an empty waveform"));
        }
        let n = self.config.fft_size;
        let nb = self.config.num_bins();
        let num_frames = self.config.num_frames(w.len());
        let mut bins = Vec::with_capacity(num_frames * nb);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..num_frames {
            for (b, x) in buf.iter_mut().zip(self.windowed_frame(&w.samples, t)) {
                *b = Complex::new(x, T::zero());
            }
            self.forward.process(&mut buf);
            bins.extend_from_slice(&buf[..nb]);
        }
        Ok(Spectrogram { bins, num_frames, config: self.config, orig_len: w.len(), sample_rate: w.sample_rate })
    }

    pub fn synthesize(&self, spec: &Spectrogram<T>) -> Result<Waveform<T>> {
        if spec.config != self.config {
            return Err(Error::Geometry(format!("spectrogram {} vs engine {}", spec.config, self.config)));
        }
        spec.check_consistent()?;
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let nb = self.config.num_bins();
        let pad = self.config.pad();
        let inv_n = T::one() / T::of_usize(n);
        let norm = self.overlap_norm(spec.num_frames);
        let mut acc = vec![T::zero(); norm.len()];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..spec.num_frames {
            let frame = spec.frame(t);
            buf[..nb].copy_from_slice(frame);
            for k in 1..n / 2 {
                buf[n - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            for (m, &g) in self.window.iter().enumerate() {
                acc[t * hop + m] = acc[t * hop + m] + g * buf[m].re * inv_n;
            }
        }
        let samples = (0..spec.orig_len).map(|i| acc[i + pad] / norm[i + pad]).collect();
        debug_assert!(nb == n / 2 + 1);
        Ok(Waveform { samples, sample_rate: spec.sample_rate })
    }

    /// Adjoint of [`Stft::synthesize`] under the weighted half-spectrum inner
    /// product: `⟨synthesize(A), v⟩ == A.inner(&adjoint(v))`.
    ///
    /// The partial derivatives of a scalar `L(synthesize(A))` with respect to
    /// `Re A[t,f]` and `Im A[t,f]` are `w_f` times the real and imaginary
    /// parts of `adjoint(dL/dy)`; see [`Stft::pullback`].
    pub fn adjoint(&self, v: &Waveform<T>, geometry: SpecGeometry) -> Result<Spectrogram<T>> {
        if v.len() != geometry.orig_len {
            return Err(Error::Geometry(format!(
                "adjoint input has {} samples, geometry expects {}",
                v.len(),
                geometry.orig_len
            )));
        }
        if geometry.num_frames != self.config.num_frames(geometry.orig_len) {
            return Err(Error::Geometry(format!(
                "{} frames inconsistent with {} samples",
                geometry.num_frames, geometry.orig_len
            )));
        }
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let nb = self.config.num_bins();
        let pad = self.config.pad();
        let inv_n = T::one() / T::of_usize(n);
        let norm = self.overlap_norm(geometry.num_frames);
        // v placed in padded coordinates and divided by the normaliser.
        let mut scaled = vec![T::zero(); norm.len()];
        for (i, &x) in v.samples.iter().enumerate() {
            scaled[i + pad] = x / norm[i + pad];
        }
        let mut bins = Vec::with_capacity(geometry.num_frames * nb);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..geometry.num_frames {
            for (m, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(self.window[m] * scaled[t * hop + m], T::zero());
            }
            self.forward.process(&mut buf);
            bins.extend(buf[..nb].iter().map(|c| *c * inv_n));
        }
        Ok(Spectrogram {
            bins,
            num_frames: geometry.num_frames,
            config: self.config,
            orig_len: geometry.orig_len,
            sample_rate: v.sample_rate,
        })
    }

    /// Gradient of a loss with respect to a spectrogram, given the gradient
    /// with respect to its synthesized waveform. Entry `[t,f]` holds
    /// `∂L/∂Re + i·∂L/∂Im`.
    pub fn pullback(&self, grad_wave: &Waveform<T>, geometry: SpecGeometry) -> Result<Spectrogram<T>> {
        let mut g = self.adjoint(grad_wave, geometry)?;
        let nb = g.num_bins();
        for (i, b) in g.bins.iter_mut().enumerate() {
            *b = *b * T::of_usize(self.config.bin_weight(i % nb));
        }
        Ok(g)
    }
}

pub fn stft<T: Real>(w: &Waveform<T>, cfg: StftConfig) -> Result<Spectrogram<T>> {
    Stft::new(cfg)?.analyze(w)
}

pub fn istft<T: Real>(spec: &Spectrogram<T>) -> Result<Waveform<T>> {
    Stft::new(spec.config)?.synthesize(spec)
}

pub fn istft_adjoint<T: Real>(w_grad: &Waveform<T>, cfg: StftConfig, geometry: SpecGeometry) -> Result<Spectrogram<T>> {
    Stft::new(cfg)?.adjoint(w_grad, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform<f64> {
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
    }

    fn random_spec(rng: &mut ChaCha8Rng, cfg: StftConfig, len: usize) -> Spectrogram<f64> {
        let geom = SpecGeometry { num_frames: cfg.num_frames(len), orig_len: len };
        let mut s = Spectrogram::zeros(cfg, geom, 8000);
        for b in &mut s.bins {
            *b = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        s
    }

    fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(512, 128).is_ok());
        assert!(StftConfig::new(500, 100).is_err());
        assert!(StftConfig::new(512, 100).is_err());
        assert!(StftConfig::new(512, 0).is_err());
    }

    #[test]
    fn reflect_padding_indices() {
        let idx: Vec<usize> = (-3..7).map(|p| reflect_index(p, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn frame_count_rule() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::<f64>::zeros(4000, 8000), cfg).unwrap();
        assert_eq!(s.num_frames, 1 + (4000 + 512 - 512) / 128);
        assert_eq!(s.num_bins(), 257);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::<f64>::zeros(1000, 8000), cfg).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
        let w = istft(&s).unwrap();
        assert_eq!(w.len(), 1000);
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(stft(&Waveform::<f64>::new(vec![], 8000), StftConfig::default()).is_err());
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let cfg = StftConfig::default();
        let mut x = Waveform::<f64>::zeros(1000, 8000);
        x.samples[0] = 1.0;
        let s = stft(&x, cfg).unwrap();
        // Centre padding puts sample 0 in the middle of frame 0.
        let g = sqrt_hann::<f64>(512)[256];
        for c in s.frame(0) {
            assert!((c.norm() - g).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_centred_sine_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let len = 4000;
        for k in [5usize, 64, 200] {
            let freq = k as f64 * 8000.0 / 512.0;
            let x = Waveform::new(
                (0..len).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / 8000.0).sin()).collect(),
                8000,
            );
            let s = stft(&x, cfg).unwrap();
            let win = sqrt_hann::<f64>(512);
            for t in 2..s.num_frames - 2 {
                let argmax = (0..s.num_bins())
                    .max_by(|&a, &b| s.get(t, a).norm().partial_cmp(&s.get(t, b).norm()).unwrap())
                    .unwrap();
                assert_eq!(argmax, k, "frame {t}");
                // Direct DFT of the windowed frame at bin k.
                let frame = Stft::new(cfg).unwrap().windowed_frame(&x.samples, t);
                let direct: Complex<f64> = frame
                    .iter()
                    .enumerate()
                    .map(|(n, &v)| Complex::from_polar(v, -2.0 * std::f64::consts::PI * (k * n) as f64 / 512.0))
                    .sum();
                assert!((direct - s.get(t, k)).norm() < 1e-9);
                assert!(win.len() == 512);
            }
        }
    }

    #[test]
    fn round_trip_random() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let engine = Stft::new(cfg).unwrap();
        for _ in 0..100 {
            let x = random_wave(&mut rng, 4000);
            let y = engine.synthesize(&engine.analyze(&x).unwrap()).unwrap();
            assert!(rel_rms(&y.samples, &x.samples) <= 1e-6);
        }
    }

    #[test]
    fn round_trip_short_and_f32() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_wave(&mut rng, 300);
        let y = istft(&stft(&x, cfg).unwrap()).unwrap();
        assert!(rel_rms(&y.samples, &x.samples) <= 1e-10);
        let xf: Waveform<f32> = x.cast();
        let yf = istft(&stft(&xf, cfg).unwrap()).unwrap();
        let yf64: Vec<f64> = yf.samples.iter().map(|&v| v as f64).collect();
        assert!(rel_rms(&yf64, &x.samples) <= 1e-5);
    }

    #[test]
    fn synthesis_is_linear() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spec(&mut rng, cfg, 1000);
        let b = random_spec(&mut rng, cfg, 1000);
        let (ca, cb) = (0.7, -1.3);
        let lhs = istft(&a.combine(ca, &b, cb).unwrap()).unwrap();
        let ia = istft(&a).unwrap();
        let ib = istft(&b).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs.samples[i] - (ca * ia.samples[i] + cb * ib.samples[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn parseval_with_symmetry_weights() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_wave(&mut rng, 2000);
        let engine = Stft::new(cfg).unwrap();
        let s = engine.analyze(&x).unwrap();
        let frame_energy: f64 = (0..s.num_frames)
            .map(|t| engine.windowed_frame(&x.samples, t).iter().map(|v| v * v).sum::<f64>())
            .sum();
        let spec_energy = s.energy() / cfg.fft_size as f64;
        assert!((spec_energy - frame_energy).abs() <= 1e-8 * frame_energy);
    }

    #[test]
    fn adjoint_identity() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let len = 9 * cfg.hop + 17; // 10 frames
        for _ in 0..10 {
            let a = random_spec(&mut rng, cfg, len);
            assert_eq!(a.num_frames, 10);
            let v = random_wave(&mut rng, len);
            let lhs: f64 = istft(&a).unwrap().samples.iter().zip(&v.samples).map(|(x, y)| x * y).sum();
            let rhs = a.inner(&istft_adjoint(&v, cfg, a.geometry()).unwrap());
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let cfg = StftConfig::default();
        let geom = SpecGeometry { num_frames: cfg.num_frames(700), orig_len: 700 };
        let s = istft_adjoint(&Waveform::<f64>::zeros(700, 8000), cfg, geom).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let len = 2 * cfg.hop + 50;
        let a = random_spec(&mut rng, cfg, len);
        let engine = Stft::new(cfg).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let t = rng.gen_range(0..a.num_frames);
            let f = rng.gen_range(0..a.num_bins());
            let n = rng.gen_range(0..len);
            let mut plus = a.clone();
            plus.get_mut(t, f).re += h;
            let mut minus = a.clone();
            minus.get_mut(t, f).re -= h;
            let fd = (engine.synthesize(&plus).unwrap().samples[n] - engine.synthesize(&minus).unwrap().samples[n]) / (2.0 * h);
            let mut e = Waveform::zeros(len, 8000);
            e.samples[n] = 1.0;
            let col = engine.pullback(&e, a.geometry()).unwrap().get(t, f).re;
            assert!((fd - col).abs() <= 1e-6, "{fd} vs {col}");
        }
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let cfg = StftConfig::default();
        let mut s = stft(&Waveform::<f64>::zeros(1000, 8000), cfg).unwrap();
        s.orig_len = 5000;
        assert!(matches!(istft(&s), Err(Error::Geometry(_))));
        let geom = SpecGeometry { num_frames: 3, orig_len: 1000 };
        assert!(istft_adjoint(&Waveform::<f64>::zeros(1000, 8000), cfg, geom).is_err());
    }
}
