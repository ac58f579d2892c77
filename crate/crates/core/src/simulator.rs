//! Dataset generation: target speech mixed with noise, an interfering
//! speaker, or both, at random SNRs.

use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::{read_wav, save_manifest, write_wav, Condition, Manifest, MixtureRecord, Waveform};
use crate::error::{Error, Result};
use crate::prep::mix_at_snr;
use crate::scalar::Real;

/// Peak level the mixture is normalised below.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCounts {
    pub noise: usize,
    pub mix: usize,
    pub nmix: usize,
}

impl Default for ConditionCounts {
    fn default() -> Self {
        Self { noise: 5, mix: 2, nmix: 1 }
    }
}

impl ConditionCounts {
    pub fn total(&self) -> usize {
        self.noise + self.mix + self.nmix
    }

    pub fn get(&self, c: Condition) -> usize {
        match c {
            Condition::Noise => self.noise,
            Condition::Mix => self.mix,
            Condition::Nmix => self.nmix,
        }
    }

    /// Condition of the record at `index`: all noise first, then mix, then nmix.
    pub fn condition_at(&self, index: usize) -> Option<Condition> {
        if index < self.noise {
            Some(Condition::Noise)
        } else if index < self.noise + self.mix {
            Some(Condition::Mix)
        } else if index < self.total() {
            Some(Condition::Nmix)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub counts: ConditionCounts,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub clean_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            counts: ConditionCounts::default(),
            snr_lo: -5.0,
            snr_hi: 20.0,
            seconds: 10.0,
            sample_rate: 8000,
            seed: 0,
            clean_dir: None,
            noise_dir: None,
            rir_dir: None,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_lo <= self.snr_hi) || !self.snr_lo.is_finite() || !self.snr_hi.is_finite() {
            return Err(Error::invalid(format!("bad SNR range {}:{}", self.snr_lo, self.snr_hi)));
        }
        if !(self.seconds > 0.0) {
            return Err(Error::invalid("seconds must be positive"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.seconds * self.sample_rate as f64).round() as usize
    }

    fn draw_snr(&self, rng: &mut impl Rng) -> f64 {
        if self.snr_lo == self.snr_hi {
            self.snr_lo
        } else {
            rng.gen_range(self.snr_lo..=self.snr_hi)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Utterance<T> {
    pub name: String,
    pub wave: Waveform<T>,
}

#[derive(Debug, Clone)]
pub struct Speaker<T> {
    pub name: String,
    pub utterances: Vec<Utterance<T>>,
}

/// Source material: speakers, backgrounds and impulse responses.
#[derive(Debug, Clone, Default)]
pub struct SourcePools<T> {
    pub speakers: Vec<Speaker<T>>,
    pub noises: Vec<Utterance<T>>,
    pub rirs: Vec<Utterance<T>>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.extension().map_or(false, |e| e.eq_ignore_ascii_case("wav"))
}

fn load_flat<T: Real>(dir: &Path, sample_rate: u32) -> Result<Vec<Utterance<T>>> {
    let mut out = Vec::new();
    for p in sorted_entries(dir)?.into_iter().filter(|p| is_wav(p)) {
        let wave: Waveform<T> = read_wav(&p)?;
        if wave.sample_rate != sample_rate {
            return Err(Error::UnsupportedAudio {
                path: p,
                what: format!("{} Hz, pool expects {} Hz", wave.sample_rate, sample_rate),
            });
        }
        let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push(Utterance { name, wave });
    }
    Ok(out)
}

impl<T: Real> SourcePools<T> {
    /// Reads `clean_dir/<speaker>/*.wav`, `noise_dir/*.wav`, `rir_dir/*.wav`.
    pub fn load(spec: &SimSpec) -> Result<Self> {
        let mut pools = SourcePools { speakers: Vec::new(), noises: Vec::new(), rirs: Vec::new() };
        if let Some(clean) = &spec.clean_dir {
            for p in sorted_entries(clean)?.into_iter().filter(|p| p.is_dir()) {
                let utterances = load_flat(&p, spec.sample_rate)?;
                if !utterances.is_empty() {
                    let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                    pools.speakers.push(Speaker { name, utterances });
                }
            }
        }
        if let Some(noise) = &spec.noise_dir {
            pools.noises = load_flat(noise, spec.sample_rate)?;
        }
        if let Some(rir) = &spec.rir_dir {
            pools.rirs = load_flat(rir, spec.sample_rate)?;
        }
        Ok(pools)
    }

    /// Checks the pools can serve every requested condition.
    pub fn check(&self, counts: &ConditionCounts) -> Result<()> {
        if counts.total() == 0 {
            return Ok(());
        }
        if !self.speakers.iter().any(|s| s.utterances.len() >= 2) {
            return Err(Error::invalid("insufficient pool: need a speaker with at least two utterances"));
        }
        if (counts.mix > 0 || counts.nmix > 0) && self.speakers.len() < 2 {
            return Err(Error::invalid("insufficient pool: mix/nmix need at least two speakers"));
        }
        if (counts.noise > 0 || counts.nmix > 0) && self.noises.is_empty() {
            return Err(Error::invalid("insufficient pool: noise/nmix need a noise pool"));
        }
        Ok(())
    }
}

/// Per-record seed, independent of generation order.
pub fn record_seed(master: u64, index: usize) -> u64 {
    // splitmix64 finaliser over the pair.
    let mut z = master ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `x * h`, truncated to `x.len()` samples.
pub fn convolve_truncated<T: Real>(x: &[T], h: &[T]) -> Vec<T> {
    if x.is_empty() || h.is_empty() {
        return vec![T::zero(); x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[T]| {
        let mut buf: Vec<Complex<T>> = v.iter().map(|&s| Complex::new(s, T::zero())).collect();
        buf.resize(n, Complex::new(T::zero(), T::zero()));
        buf
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p = *p * *q;
    }
    inv.process(&mut a);
    let scale = T::one() / T::of_usize(n);
    a[..x.len()].iter().map(|c| c.re * scale).collect()
}

/// One generated record before it is written out.
#[derive(Debug, Clone)]
pub struct SimulatedRecord<T> {
    pub index: usize,
    pub condition: Condition,
    pub seed: u64,
    pub noisy: Waveform<T>,
    pub clean: Waveform<T>,
    pub enroll: Waveform<T>,
    pub snr_db: f64,
    /// Noise SNR against the two-talker mixture (nmix only).
    pub noise_snr_db: Option<f64>,
    pub target: String,
    pub target_utterance: String,
    pub enroll_utterance: String,
    pub interferer: Option<String>,
    pub noise: Option<String>,
}

/// Crops (random offset) or loop-pads to `len`.
fn fit_length<T: Real>(w: &Waveform<T>, len: usize, rng: &mut impl Rng, what: &str) -> Waveform<T> {
    if w.len() < len {
        log::warn!("{what}: {} samples shorter than {len}, loop-padding", w.len());
        w.looped_to(len)
    } else {
        let start = rng.gen_range(0..=w.len() - len);
        Waveform::new(w.samples[start..start + len].to_vec(), w.sample_rate)
    }
}

fn maybe_reverb<T: Real>(w: Waveform<T>, rirs: &[Utterance<T>], rng: &mut impl Rng) -> Waveform<T> {
    match rirs.choose(rng) {
        Some(rir) => Waveform::new(convolve_truncated(&w.samples, &rir.wave.samples), w.sample_rate),
        None => w,
    }
}

fn peak<T: Real>(w: &Waveform<T>) -> f64 {
    w.samples.iter().fold(0.0, |m, s| m.max(s.abs().to_f64_lossy()))
}

fn scale<T: Real>(w: &mut Waveform<T>, g: f64) {
    let g = T::of(g);
    w.samples.iter_mut().for_each(|s| *s = *s * g);
}

/// Generates record `index` in memory from its own derived seed.
pub fn simulate_record<T: Real>(spec: &SimSpec, pools: &SourcePools<T>, index: usize) -> Result<SimulatedRecord<T>> {
    let condition = spec
        .counts
        .condition_at(index)
        .ok_or_else(|| Error::invalid(format!("record index {index} beyond counts")))?;
    let seed = record_seed(spec.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.num_samples();

    let eligible: Vec<usize> = (0..pools.speakers.len()).filter(|&i| pools.speakers[i].utterances.len() >= 2).collect();
    let &ti = eligible
        .choose(&mut rng)
        .ok_or_else(|| Error::invalid("insufficient pool: need a speaker with at least two utterances"))?;
    let target = &pools.speakers[ti];
    let picks: Vec<&Utterance<T>> = target.utterances.choose_multiple(&mut rng, 2).collect();
    let (content, enroll_utt) = (picks[0], picks[1]);

    let dry = fit_length(&content.wave, len, &mut rng, &content.name);
    let clean = maybe_reverb(dry, &pools.rirs, &mut rng);
    let snr_db = spec.draw_snr(&mut rng);

    let mut interferer = None;
    let mut noise_name = None;
    let mut noise_snr_db = None;
    let mut noisy = match condition {
        Condition::Noise => {
            let n = pools.noises.choose(&mut rng).ok_or_else(|| Error::invalid("insufficient pool: no noise"))?;
            noise_name = Some(n.name.clone());
            let seg = fit_length(&n.wave, len, &mut rng, &n.name);
            mix_at_snr(&clean, &seg, snr_db)?.0
        }
        Condition::Mix | Condition::Nmix => {
            let others: Vec<&Speaker<T>> = pools.speakers.iter().enumerate().filter(|&(i, _)| i != ti).map(|(_, s)| s).collect();
            let other = others.choose(&mut rng).ok_or_else(|| Error::invalid("insufficient pool: mix needs two speakers"))?;
            let utt = other.utterances.choose(&mut rng).expect("speakers have utterances");
            interferer = Some(format!("{}/{}", other.name, utt.name));
            let seg = fit_length(&utt.wave, len, &mut rng, &utt.name);
            let seg = maybe_reverb(seg, &pools.rirs, &mut rng);
            let two_talker = mix_at_snr(&clean, &seg, snr_db)?.0;
            if condition == Condition::Nmix {
                let n = pools.noises.choose(&mut rng).ok_or_else(|| Error::invalid("insufficient pool: no noise"))?;
                noise_name = Some(n.name.clone());
                let nseg = fit_length(&n.wave, len, &mut rng, &n.name);
                let second = spec.draw_snr(&mut rng);
                noise_snr_db = Some(second);
                mix_at_snr(&two_talker, &nseg, second)?.0
            } else {
                two_talker
            }
        }
    };

    let mut clean = clean;
    let p = peak(&noisy);
    if p > PEAK_LIMIT {
        let g = PEAK_LIMIT / p;
        scale(&mut noisy, g);
        scale(&mut clean, g);
    }
    let mut enroll = enroll_utt.wave.clone();
    let pe = peak(&enroll);
    if pe > PEAK_LIMIT {
        scale(&mut enroll, PEAK_LIMIT / pe);
    }

    Ok(SimulatedRecord {
        index,
        condition,
        seed,
        noisy,
        clean,
        enroll,
        snr_db,
        noise_snr_db,
        target: target.name.clone(),
        target_utterance: content.name.clone(),
        enroll_utterance: enroll_utt.name.clone(),
        interferer,
        noise: noise_name,
    })
}

impl<T> SimulatedRecord<T> {
    pub fn file_name(&self) -> String {
        format!("{:04}.wav", self.index)
    }

    pub fn to_manifest_record(&self) -> MixtureRecord {
        let f = self.file_name();
        let mut rec = MixtureRecord::new(format!("noisy/{f}"), format!("clean/{f}"), format!("enroll/{f}"), self.condition);
        rec.id = Some(format!("{:04}", self.index));
        rec.snr_db = Some(self.snr_db);
        rec.seed = Some(self.seed);
        rec.interferer = self.interferer.clone();
        rec.extra.insert("speaker".into(), Value::from(self.target.clone()));
        rec.extra.insert("utterance".into(), Value::from(self.target_utterance.clone()));
        rec.extra.insert("enroll_utterance".into(), Value::from(self.enroll_utterance.clone()));
        if let Some(n) = &self.noise {
            rec.extra.insert("noise".into(), Value::from(n.clone()));
        }
        if let Some(s) = self.noise_snr_db {
            rec.extra.insert("noise_snr_db".into(), Value::from(s));
        }
        rec
    }
}

/// Records generated concurrently before each write-out.
const SIM_CHUNK: usize = 32;

/// Generates every record, writes `{noisy,clean,enroll}/NNNN.wav` and
/// `manifest.jsonl` under `out_dir`, and returns the manifest.
pub fn simulate_with_pools<T: Real>(spec: &SimSpec, pools: &SourcePools<T>, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    pools.check(&spec.counts)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let total = spec.counts.total();
    if total > 0 {
        for sub in ["noisy", "clean", "enroll"] {
            let d = out_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let mut records = Vec::with_capacity(total);
    for start in (0..total).step_by(SIM_CHUNK) {
        let end = (start + SIM_CHUNK).min(total);
        let batch: Vec<SimulatedRecord<T>> =
            (start..end).into_par_iter().map(|i| simulate_record(spec, pools, i)).collect::<Result<_>>()?;
        for r in batch {
            let f = r.file_name();
            write_wav(out_dir.join("noisy").join(&f), &r.noisy)?;
            write_wav(out_dir.join("clean").join(&f), &r.clean)?;
            write_wav(out_dir.join("enroll").join(&f), &r.enroll)?;
            records.push(r.to_manifest_record());
        }
    }
    let manifest = Manifest::new(records, out_dir);
    save_manifest(&manifest, out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Loads pools from the directories in `spec`, then simulates.
pub fn simulate(spec: &SimSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    if spec.counts.total() > 0 && spec.clean_dir.is_none() {
        return Err(Error::invalid("a clean speech directory is required"));
    }
    let pools = SourcePools::<f64>::load(spec)?;
    simulate_with_pools(spec, &pools, out_dir)
}
