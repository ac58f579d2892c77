//! Enrollment-conditioned magnitude-mask estimator with hand-written backprop.
//!
//! Per frame `t` of the noisy spectrogram `Y`:
//!
//! ```text
//! x_t    = [log1p|Y_t| ; emb]
//! h1     = relu(x_t · W1 + b1)
//! h2     = relu(h1 · W2 + b2)
//! mask_t = sigmoid(h2 · W3 + b3)
//! est_t  = mask_t ⊙ Y_t
//! ```
//!
//! The embedding is `normalize(tanh(mean_t log1p|S_t| · Ws + bs))` of the
//! enrollment `S`. All weights live in one flat vector so any parameter can be
//! addressed by index.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::audio::Waveform;
use crate::dsp::{Spectrogram, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_FORMAT: &str = "pse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub emb_dim: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn for_stft(cfg: &StftConfig, emb_dim: usize, hidden: usize) -> Self {
        Self { feat_dim: cfg.num_bins(), emb_dim, hidden }
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = off;
            off += n;
            s
        };
        let (f, e, h) = (self.feat_dim, self.emb_dim, self.hidden);
        Layout {
            spk_w: take(f * e),
            spk_b: take(e),
            l1_w: take((f + e) * h),
            l1_b: take(h),
            l2_w: take(h * h),
            l2_b: take(h),
            out_w: take(h * f),
            out_b: take(f),
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { feat_dim: 257, emb_dim: 32, hidden: 128 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    spk_w: usize,
    spk_b: usize,
    l1_w: usize,
    l1_b: usize,
    l2_w: usize,
    l2_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

/// All trainable tensors, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub values: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { dims, values: vec![T::zero(); dims.param_count()] }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let lay = dims.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |values: &mut [T], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in values {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        };
        let (f, e, h) = (dims.feat_dim, dims.emb_dim, dims.hidden);
        fill(&mut p.values[lay.spk_w..lay.spk_b], f);
        fill(&mut p.values[lay.l1_w..lay.l1_b], f + e);
        fill(&mut p.values[lay.l2_w..lay.l2_b], h);
        fill(&mut p.values[lay.out_w..lay.out_b], h);
        p
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn slice(&self, start: usize, len: usize) -> &[T] {
        &self.values[start..start + len]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { dims: self.dims, values: self.values.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }
}

/// Unit-norm speaker embedding (or all zeros for a silent enrollment).
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding<T>(pub Vec<T>);

impl<T: Real> SpeakerEmbedding<T> {
    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    features: Vec<T>,
    activ: Vec<T>,
    norm: T,
    silent: bool,
}

/// Frame-averaged `log1p` magnitudes of the enrollment.
pub fn enrollment_features<T: Real>(enroll: &Waveform<T>, stft: &Stft<T>) -> Result<Vec<T>> {
    if enroll.is_empty() {
        return Err(Error::invalid("empty enrollment"));
    }
    let spec = stft.analyze(enroll)?;
    let nb = spec.num_bins();
    let mut acc = vec![T::zero(); nb];
    for t in 0..spec.num_frames {
        for (a, c) in acc.iter_mut().zip(spec.frame(t)) {
            *a = *a + c.norm().ln_1p();
        }
    }
    let frames = T::of_usize(spec.num_frames);
    Ok(acc.into_iter().map(|a| a / frames).collect())
}

pub fn embed_from_features<T: Real>(features: &[T], params: &ModelParams<T>) -> Result<(SpeakerEmbedding<T>, EmbedCache<T>)> {
    let d = params.dims;
    if features.len() != d.feat_dim {
        return Err(Error::Geometry(format!("{} enrollment features, model expects {}", features.len(), d.feat_dim)));
    }
    let lay = d.layout();
    let w = params.slice(lay.spk_w, d.feat_dim * d.emb_dim);
    let mut z = params.slice(lay.spk_b, d.emb_dim).to_vec();
    for (i, &x) in features.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (zj, &wij) in z.iter_mut().zip(&w[i * d.emb_dim..(i + 1) * d.emb_dim]) {
            *zj = *zj + x * wij;
        }
    }
    let activ: Vec<T> = z.iter().map(|v| v.tanh()).collect();
    let norm = activ.iter().map(|&v| v * v).sum::<T>().sqrt();
    let silent = norm <= T::of(1e-12);
    let emb = if silent {
        log::warn!("silent enrollment: speaker embedding set to zero");
        vec![T::zero(); d.emb_dim]
    } else {
        activ.iter().map(|&v| v / norm).collect()
    };
    Ok((SpeakerEmbedding(emb), EmbedCache { features: features.to_vec(), activ, norm, silent }))
}

pub fn embed_speaker<T: Real>(enroll: &Waveform<T>, params: &ModelParams<T>, stft: &Stft<T>) -> Result<(SpeakerEmbedding<T>, EmbedCache<T>)> {
    embed_from_features(&enrollment_features(enroll, stft)?, params)
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    noisy: Spectrogram<T>,
    input: Vec<T>,
    pre1: Vec<T>,
    pre2: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    pub mask: Vec<T>,
    param_count: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// frames × feat_dim, each entry in (0, 1).
    pub mask: Vec<T>,
    pub est_spec: Spectrogram<T>,
    pub cache: ForwardCache<T>,
}

fn affine<T: Real>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_out = b.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi.is_zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
            *o = *o + xi * wij;
        }
    }
}

// Accumulates dW += xᵀ·dy, db += dy, and writes dx = W·dy if requested.
fn affine_backward<T: Real>(x: &[T], w: &[T], dy: &[T], dw: &mut [T], db: &mut [T], dx: Option<&mut [T]>) {
    let n_out = dy.len();
    for (dbj, &g) in db.iter_mut().zip(dy) {
        *dbj = *dbj + g;
    }
    for (i, &xi) in x.iter().enumerate() {
        if !xi.is_zero() {
            for (d, &g) in dw[i * n_out..(i + 1) * n_out].iter_mut().zip(dy) {
                *d = *d + xi * g;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, dxi) in dx.iter_mut().enumerate() {
            *dxi = w[i * n_out..(i + 1) * n_out].iter().zip(dy).map(|(&wij, &g)| wij * g).sum();
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn forward<T: Real>(noisy: &Spectrogram<T>, emb: &SpeakerEmbedding<T>, params: &ModelParams<T>) -> Result<ForwardOutput<T>> {
    let d = params.dims;
    if noisy.num_bins() != d.feat_dim {
        return Err(Error::Geometry(format!("spectrogram has {} bins, model expects {}", noisy.num_bins(), d.feat_dim)));
    }
    if emb.0.len() != d.emb_dim {
        return Err(Error::Geometry(format!("embedding has {} dims, model expects {}", emb.0.len(), d.emb_dim)));
    }
    let lay = d.layout();
    let (f, e, h) = (d.feat_dim, d.emb_dim, d.hidden);
    let frames = noisy.num_frames;
    let mut input = vec![T::zero(); frames * (f + e)];
    let mut pre1 = vec![T::zero(); frames * h];
    let mut pre2 = vec![T::zero(); frames * h];
    let mut h1 = vec![T::zero(); frames * h];
    let mut h2 = vec![T::zero(); frames * h];
    let mut mask = vec![T::zero(); frames * f];
    let mut logits = vec![T::zero(); f];
    let mut est = noisy.clone();
    for t in 0..frames {
        let x = &mut input[t * (f + e)..(t + 1) * (f + e)];
        for (xi, c) in x.iter_mut().zip(noisy.frame(t)) {
            *xi = c.norm().ln_1p();
        }
        x[f..].copy_from_slice(&emb.0);
        let p1 = &mut pre1[t * h..(t + 1) * h];
        affine(x, params.slice(lay.l1_w, (f + e) * h), params.slice(lay.l1_b, h), p1);
        let a1 = &mut h1[t * h..(t + 1) * h];
        for (a, &p) in a1.iter_mut().zip(p1.iter()) {
            *a = p.max(T::zero());
        }
        let p2 = &mut pre2[t * h..(t + 1) * h];
        affine(a1, params.slice(lay.l2_w, h * h), params.slice(lay.l2_b, h), p2);
        let a2 = &mut h2[t * h..(t + 1) * h];
        for (a, &p) in a2.iter_mut().zip(p2.iter()) {
            *a = p.max(T::zero());
        }
        affine(a2, params.slice(lay.out_w, h * f), params.slice(lay.out_b, f), &mut logits);
        let m = &mut mask[t * f..(t + 1) * f];
        for ((mv, &l), c) in m.iter_mut().zip(&logits).zip(est.frame_mut(t)) {
            *mv = sigmoid(l);
            *c = *c * *mv;
        }
    }
    let cache = ForwardCache {
        noisy: noisy.clone(),
        input,
        pre1,
        pre2,
        h1,
        h2,
        mask: mask.clone(),
        param_count: params.count(),
    };
    Ok(ForwardOutput { mask, est_spec: est, cache })
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Same layout as [`ModelParams::values`].
    pub params: Vec<T>,
    pub embedding: Vec<T>,
}

/// Reverse pass for a loss whose gradient with respect to `est_spec` is given.
pub fn backward<T: Real>(cache: &ForwardCache<T>, grad_est: &Spectrogram<T>, params: &ModelParams<T>) -> Result<Gradients<T>> {
    if cache.param_count != params.count() {
        return Err(Error::invalid("stale forward cache: parameter layout changed"));
    }
    if !grad_est.same_geometry(&cache.noisy) {
        return Err(Error::Geometry("upstream gradient does not match the cached forward pass".into()));
    }
    let d = params.dims;
    let lay = d.layout();
    let (f, e, h) = (d.feat_dim, d.emb_dim, d.hidden);
    let mut grads = vec![T::zero(); params.count()];
    let mut grad_emb = vec![T::zero(); e];
    let mut d_logit = vec![T::zero(); f];
    let mut d_h2 = vec![T::zero(); h];
    let mut d_h1 = vec![T::zero(); h];
    let mut d_x = vec![T::zero(); f + e];
    for t in 0..cache.noisy.num_frames {
        let m = &cache.mask[t * f..(t + 1) * f];
        for (((dl, &mv), g), y) in d_logit.iter_mut().zip(m).zip(grad_est.frame(t)).zip(cache.noisy.frame(t)) {
            // ∂L/∂mask = Re(g · conj(Y)); sigmoid' = m(1 - m).
            let d_mask = g.re * y.re + g.im * y.im;
            *dl = d_mask * mv * (T::one() - mv);
        }
        let h2 = &cache.h2[t * h..(t + 1) * h];
        let (w_out, rest) = grads[lay.out_w..].split_at_mut(h * f);
        affine_backward(h2, params.slice(lay.out_w, h * f), &d_logit, w_out, &mut rest[..f], Some(&mut d_h2));
        for (dv, &p) in d_h2.iter_mut().zip(&cache.pre2[t * h..(t + 1) * h]) {
            if p <= T::zero() {
                *dv = T::zero();
            }
        }
        let h1 = &cache.h1[t * h..(t + 1) * h];
        let (w2, rest) = grads[lay.l2_w..].split_at_mut(h * h);
        affine_backward(h1, params.slice(lay.l2_w, h * h), &d_h2, w2, &mut rest[..h], Some(&mut d_h1));
        for (dv, &p) in d_h1.iter_mut().zip(&cache.pre1[t * h..(t + 1) * h]) {
            if p <= T::zero() {
                *dv = T::zero();
            }
        }
        let x = &cache.input[t * (f + e)..(t + 1) * (f + e)];
        let (w1, rest) = grads[lay.l1_w..].split_at_mut((f + e) * h);
        affine_backward(x, params.slice(lay.l1_w, (f + e) * h), &d_h1, w1, &mut rest[..h], Some(&mut d_x));
        for (ge, &dv) in grad_emb.iter_mut().zip(&d_x[f..]) {
            *ge = *ge + dv;
        }
    }
    Ok(Gradients { params: grads, embedding: grad_emb })
}

/// Propagates an embedding gradient into the speaker projection, in place.
pub fn backward_embedding<T: Real>(cache: &EmbedCache<T>, grad_emb: &[T], params: &ModelParams<T>, grads: &mut [T]) -> Result<()> {
    let d = params.dims;
    if grad_emb.len() != d.emb_dim || grads.len() != params.count() {
        return Err(Error::Geometry("embedding gradient shape mismatch".into()));
    }
    if cache.silent {
        return Ok(());
    }
    let lay = d.layout();
    let emb: Vec<T> = cache.activ.iter().map(|&a| a / cache.norm).collect();
    let proj: T = emb.iter().zip(grad_emb).map(|(&a, &g)| a * g).sum();
    // d/du of u/‖u‖, then through tanh.
    let dz: Vec<T> = grad_emb
        .iter()
        .zip(&emb)
        .zip(&cache.activ)
        .map(|((&g, &ev), &a)| (g - ev * proj) / cache.norm * (T::one() - a * a))
        .collect();
    let (w, rest) = grads[lay.spk_w..].split_at_mut(d.feat_dim * d.emb_dim);
    affine_backward(&cache.features, params.slice(lay.spk_w, d.feat_dim * d.emb_dim), &dz, w, &mut rest[..d.emb_dim], None);
    Ok(())
}

/// Runs the enhancer on one noisy input.
pub fn enhance<T: Real>(noisy: &Waveform<T>, enroll: &Waveform<T>, params: &ModelParams<T>, stft: &Stft<T>) -> Result<Waveform<T>> {
    let (emb, _) = embed_speaker(enroll, params, stft)?;
    let spec = stft.analyze(noisy)?;
    let out = forward(&spec, &emb, params)?;
    stft.synthesize(&out.est_spec)
}

/// Parameters plus the analysis settings they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub stft: StftConfig,
    pub meta: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: ModelDims,
    stft: StftConfig,
    #[serde(default)]
    meta: Map<String, Value>,
    params: Vec<f64>,
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: ckpt.params.dims,
        stft: ckpt.stft,
        meta: ckpt.meta.clone(),
        params: ckpt.params.values.iter().map(|v| v.to_f64_lossy()).collect(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>, expect: Option<ModelDims>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format tag {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    if file.params.len() != file.dims.param_count() {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, dims {:?} need {}",
            file.params.len(),
            file.dims,
            file.dims.param_count()
        )));
    }
    if let Some(dims) = expect {
        if dims != file.dims {
            return Err(Error::Checkpoint(format!("dimension mismatch: file {:?}, expected {:?}", file.dims, dims)));
        }
    }
    if file.dims.feat_dim != file.stft.num_bins() {
        return Err(Error::Checkpoint("feature dimension disagrees with the STFT size".into()));
    }
    Ok(Checkpoint {
        params: ModelParams { dims: file.dims, values: file.params.into_iter().map(T::of).collect() },
        stft: file.stft,
        meta: file.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpecGeometry;
    use num_complex::Complex;

    fn small_dims() -> ModelDims {
        ModelDims::for_stft(&StftConfig::default(), 4, 8)
    }

    fn random_wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform<f64> {
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 8000)
    }

    #[test]
    fn parameter_count() {
        assert_eq!(ModelDims::default().param_count(), 95_041);
        let p = ModelParams::<f64>::init(small_dims(), 1);
        assert_eq!(p.count(), small_dims().param_count());
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let d = small_dims();
        let p = ModelParams::<f64>::init(d, 3);
        let lay = d.layout();
        let bound = 1.0 / (d.feat_dim as f64 + d.emb_dim as f64).sqrt();
        assert!(p.values[lay.l1_w..lay.l1_b].iter().all(|v| v.abs() <= bound));
        assert!(p.values[lay.l1_b..lay.l2_w].iter().all(|&v| v == 0.0));
        assert_eq!(p, ModelParams::init(d, 3));
    }

    #[test]
    fn zero_params_give_half_mask() {
        let cfg = StftConfig::default();
        let stft = Stft::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = stft.analyze(&random_wave(&mut rng, 600)).unwrap();
        let p = ModelParams::<f64>::zeros(small_dims());
        let emb = SpeakerEmbedding(vec![0.0; 4]);
        let out = forward(&spec, &emb, &p).unwrap();
        assert!(out.mask.iter().all(|&m| m == 0.5));
        for (e, y) in out.est_spec.bins.iter().zip(&spec.bins) {
            assert_eq!(*e, *y * 0.5);
        }
    }

    #[test]
    fn silent_enrollment_falls_back_to_zero() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let p = ModelParams::<f64>::zeros(small_dims());
        let (emb, _) = embed_speaker(&Waveform::zeros(800, 8000), &p, &stft).unwrap();
        assert_eq!(emb.0, vec![0.0; 4]);
        assert!(embed_speaker(&Waveform::<f64>::zeros(0, 8000), &p, &stft).is_err());
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let p = ModelParams::<f64>::init(small_dims(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let w = random_wave(&mut rng, 700);
            let (a, _) = embed_speaker(&w, &p, &stft).unwrap();
            let (b, _) = embed_speaker(&w, &p, &stft).unwrap();
            assert_eq!(a, b);
            assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_bounds_and_phase() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let p = ModelParams::<f64>::init(small_dims(), seed);
            let spec = stft.analyze(&random_wave(&mut rng, 900)).unwrap();
            let (emb, _) = embed_speaker(&random_wave(&mut rng, 900), &p, &stft).unwrap();
            let out = forward(&spec, &emb, &p).unwrap();
            assert!(out.mask.iter().all(|&m| m > 0.0 && m < 1.0));
            for (e, y) in out.est_spec.bins.iter().zip(&spec.bins) {
                assert!(e.norm() <= y.norm());
                if y.norm() > 1e-9 {
                    assert!((e.arg() - y.arg()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::<f64>::zeros(small_dims());
        let cfg = StftConfig::new(256, 64).unwrap();
        let spec = Spectrogram::<f64>::zeros(cfg, SpecGeometry { num_frames: 2, orig_len: 64 }, 8000);
        assert!(forward(&spec, &SpeakerEmbedding(vec![0.0; 4]), &p).is_err());
        let good = Spectrogram::<f64>::zeros(StftConfig::default(), SpecGeometry { num_frames: 2, orig_len: 128 }, 8000);
        assert!(forward(&good, &SpeakerEmbedding(vec![0.0; 5]), &p).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::<f64>::init(small_dims(), 1);
        let spec = stft.analyze(&random_wave(&mut rng, 300)).unwrap();
        let (emb, _) = embed_speaker(&random_wave(&mut rng, 300), &p, &stft).unwrap();
        let out = forward(&spec, &emb, &p).unwrap();
        let zero = Spectrogram::zeros(spec.config, spec.geometry(), 8000);
        let g = backward(&out.cache, &zero, &p).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.embedding.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let p = ModelParams::<f64>::init(small_dims(), 1);
        let spec = stft.analyze(&Waveform::new(vec![0.1; 300], 8000)).unwrap();
        let out = forward(&spec, &SpeakerEmbedding(vec![0.5; 4]), &p).unwrap();
        let other = ModelParams::<f64>::init(ModelDims::for_stft(&StftConfig::default(), 4, 9), 1);
        assert!(backward(&out.cache, &out.est_spec, &other).is_err());
    }

    #[test]
    fn mask_backward_matches_finite_differences() {
        // Linear upstream loss L = Σ Re(conj(c)·est): its est-gradient is c.
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::<f64>::init(small_dims(), 2);
        let spec = stft.analyze(&random_wave(&mut rng, 300)).unwrap();
        let enroll = random_wave(&mut rng, 400);
        let mut c = spec.clone();
        for b in &mut c.bins {
            *b = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let loss = |q: &ModelParams<f64>| {
            let (emb, _) = embed_speaker(&enroll, q, &stft).unwrap();
            let est = forward(&spec, &emb, q).unwrap().est_spec;
            est.bins.iter().zip(&c.bins).map(|(e, g)| e.re * g.re + e.im * g.im).sum::<f64>()
        };
        let (emb, ecache) = embed_speaker(&enroll, &p, &stft).unwrap();
        let out = forward(&spec, &emb, &p).unwrap();
        let mut g = backward(&out.cache, &c, &p).unwrap();
        backward_embedding(&ecache, &g.embedding, &p, &mut g.params).unwrap();
        let h = 1e-5;
        for _ in 0..50 {
            let i = rng.gen_range(0..p.count());
            let mut plus = p.clone();
            plus.values[i] += h;
            let mut minus = p.clone();
            minus.values[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = g.params[i];
            assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()) + 1e-9, "param {i}: {fd} vs {a}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ckpt = Checkpoint { params: ModelParams::<f64>::init(small_dims(), 9), stft: StftConfig::default(), meta: Map::new() };
        save_checkpoint(&path, &ckpt).unwrap();
        let back: Checkpoint<f64> = load_checkpoint(&path, Some(small_dims())).unwrap();
        assert_eq!(back, ckpt);
        let wrong = ModelDims { hidden: 9, ..small_dims() };
        assert!(matches!(load_checkpoint::<f64>(&path, Some(wrong)), Err(Error::Checkpoint(_))));
    }
}
