//! Scoring of enhanced outputs: SISNR per sample, hard-sample rates,
//! per-condition means and the score histogram.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Condition, Manifest, Waveform};
use crate::error::{Error, Result};
use crate::losses::neg_sisnr;
use crate::scalar::{compensated_sum, Real};

pub const HSR_THRESHOLDS: [f64; 3] = [0.0, 5.0, 10.0];
pub const HARD_THRESHOLD_DB: f64 = 10.0;

/// SISNR of `enhanced` against `clean` in dB. Lengths differing by less
/// than `hop` are truncated to the shorter one.
pub fn score_sample<T: Real>(enhanced: &Waveform<T>, clean: &Waveform<T>, hop: usize) -> Result<f64> {
    let (a, b) = (enhanced.len(), clean.len());
    let n = a.min(b);
    if a != b {
        if a.abs_diff(b) >= hop.max(1) {
            return Err(Error::invalid(format!("length mismatch: {a} vs {b} samples")));
        }
        log::warn!("truncating to {n} samples ({a} enhanced vs {b} clean)");
    }
    Ok(-neg_sisnr(&enhanced.samples[..n], &clean.samples[..n])?.loss.to_f64_lossy())
}

/// Fraction of scores strictly below `threshold`.
pub fn hsr(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("hard-sample rate of an empty score list"));
    }
    Ok(scores.iter().filter(|&&s| s < threshold).count() as f64 / scores.len() as f64)
}

/// Unit-width bins `[lo + i, lo + i + 1)` aligned to integer dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: i64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_scores(scores: &[f64]) -> Self {
        if scores.is_empty() {
            return Self { lo: 0, counts: Vec::new() };
        }
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min).floor() as i64;
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor() as i64;
        let mut counts = vec![0; (max - min + 1) as usize];
        for s in scores {
            counts[(s.floor() as i64 - min) as usize] += 1;
        }
        Self { lo: min, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(bin_lo, bin_hi, count)` rows.
    pub fn bins(&self) -> impl Iterator<Item = (i64, i64, usize)> + '_ {
        self.counts.iter().enumerate().map(|(i, &c)| (self.lo + i as i64, self.lo + i as i64 + 1, c))
    }

    /// Hard-sample rate at an integer threshold, read from the bins.
    pub fn rate_below(&self, threshold: i64) -> f64 {
        let below: usize = self.bins().filter(|&(_, hi, _)| hi <= threshold).map(|(_, _, c)| c).sum();
        below as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub condition: Condition,
    pub sisnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub count: usize,
    pub mean_sisnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScore>,
    pub count: usize,
    pub mean_sisnr_db: f64,
    pub per_condition: Vec<ConditionSummary>,
    /// `(threshold_db, rate)` for each of [`HSR_THRESHOLDS`].
    pub hsr: Vec<(f64, f64)>,
    pub histogram: Histogram,
    /// Records without a readable enhanced file.
    pub missing: Vec<String>,
}

fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    compensated_sum(values.iter().copied()) / values.len().max(1) as f64
}

impl EvalReport {
    pub fn from_scores(per_sample: Vec<SampleScore>, missing: Vec<String>) -> Self {
        let mut all: Vec<f64> = per_sample.iter().map(|s| s.sisnr_db).collect();
        let histogram = Histogram::from_scores(&all);
        let hsr_rows = HSR_THRESHOLDS.iter().map(|&t| (t, hsr(&all, t).unwrap_or(0.0))).collect();
        let per_condition = Condition::ALL
            .iter()
            .filter_map(|&c| {
                let mut v: Vec<f64> = per_sample.iter().filter(|s| s.condition == c).map(|s| s.sisnr_db).collect();
                (!v.is_empty()).then(|| ConditionSummary { condition: c, count: v.len(), mean_sisnr_db: sorted_mean(&mut v) })
            })
            .collect();
        Self {
            count: per_sample.len(),
            mean_sisnr_db: if all.is_empty() { f64::NAN } else { sorted_mean(&mut all) },
            per_sample,
            per_condition,
            hsr: hsr_rows,
            histogram,
            missing,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.per_sample.iter().map(|s| s.sisnr_db).collect()
    }

    pub fn hsr_at(&self, threshold: f64) -> Option<f64> {
        self.hsr.iter().find(|(t, _)| *t == threshold).map(|&(_, r)| r)
    }

    /// `id,condition,sisnr_db` rows in manifest order.
    pub fn write_scores_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), "id,condition,sisnr_db", self.per_sample.iter().map(|s| format!("{},{},{}", s.id, s.condition, s.sisnr_db)))
    }

    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), "bin_lo,bin_hi,count", self.histogram.bins().map(|(lo, hi, c)| format!("{lo},{hi},{c}")))
    }

    /// Summary without the per-sample list.
    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let summary = serde_json::json!({
            "count": self.count,
            "mean_sisnr_db": self.mean_sisnr_db,
            "per_condition": self.per_condition,
            "hsr": self.hsr.iter().map(|(t, r)| serde_json::json!({"threshold_db": t, "rate": r})).collect::<Vec<_>>(),
            "missing": self.missing,
        });
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Plain-text table for terminals.
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<10}{:>8}{:>14}\n", "subset", "count", "SISNR (dB)");
        for c in &self.per_condition {
            s += &format!("{:<10}{:>8}{:>14.2}\n", c.condition.as_str(), c.count, c.mean_sisnr_db);
        }
        s += &format!("{:<10}{:>8}{:>14.2}\n", "overall", self.count, self.mean_sisnr_db);
        for (t, r) in &self.hsr {
            s += &format!("HSR{t}: {:.2}%\n", 100.0 * r);
        }
        if !self.missing.is_empty() {
            s += &format!("missing: {}\n", self.missing.len());
        }
        s
    }
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(out, "{header}").map_err(io)?;
    for r in rows {
        writeln!(out, "{r}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Scores `enhanced_dir/<noisy file name>` against each record's clean file.
pub fn condition_report(manifest: &Manifest, enhanced_dir: impl AsRef<Path>, hop: usize) -> Result<EvalReport> {
    let enhanced_dir = enhanced_dir.as_ref();
    let mut per_sample = Vec::with_capacity(manifest.len());
    let mut missing = Vec::new();
    for rec in &manifest.records {
        let id = rec.record_id();
        let name = Path::new(&rec.noisy).file_name().ok_or_else(|| Error::invalid(format!("record {id}: empty noisy path")))?;
        let enhanced = match read_wav::<f64>(enhanced_dir.join(name)) {
            Ok(w) => w,
            Err(e) => {
                log::warn!("record {id}: {e}");
                missing.push(id);
                continue;
            }
        };
        let clean: Waveform<f64> = read_wav(manifest.resolve(&rec.clean))?;
        per_sample.push(SampleScore { id, condition: rec.condition, sisnr_db: score_sample(&enhanced, &clean, hop)? });
    }
    Ok(EvalReport::from_scores(per_sample, missing))
}

/// Reads an `id,...,sisnr_db` scores CSV into a map.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: String| Error::Manifest { path: path.to_path_buf(), line, message };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty scores file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let id_col = cols.iter().position(|c| *c == "id").ok_or_else(|| bad(1, "no id column".into()))?;
    let score_col = cols.iter().position(|c| *c == "sisnr_db").ok_or_else(|| bad(1, "no sisnr_db column".into()))?;
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |c: usize| fields.get(c).copied().ok_or_else(|| bad(i + 1, format!("missing column {c}")));
        let score: f64 = get(score_col)?.parse().map_err(|e| bad(i + 1, format!("bad score: {e}")))?;
        out.insert(get(id_col)?.to_string(), score);
    }
    Ok(out)
}

/// Records whose baseline score is below `threshold`, in manifest order.
pub fn hard_subset(baseline: &BTreeMap<String, f64>, manifest: &Manifest, threshold: f64) -> Result<Manifest> {
    let mut keep = Vec::new();
    let mut gaps = Vec::new();
    for rec in &manifest.records {
        match baseline.get(&rec.record_id()) {
            Some(&s) if s < threshold => keep.push(rec),
            Some(_) => {}
            None => gaps.push(rec.record_id()),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::invalid(format!("baseline scores missing for {} records (first: {})", gaps.len(), gaps[0])));
    }
    Ok(manifest.subset(keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, MixtureRecord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f64>) -> Waveform<f64> {
        Waveform::new(v, 8000)
    }

    #[test]
    fn identical_is_capped() {
        let x = wave((0..800).map(|n| (n as f64 * 0.1).sin()).collect());
        assert_eq!(score_sample(&x, &x, 128).unwrap(), 60.0);
    }

    #[test]
    fn orthogonal_is_very_negative() {
        let n = 800;
        let clean = wave((0..n).map(|i| (std::f64::consts::TAU * 5.0 * i as f64 / n as f64).sin()).collect());
        let other = wave((0..n).map(|i| (std::f64::consts::TAU * 9.0 * i as f64 / n as f64).sin()).collect());
        assert!(score_sample(&other, &clean, 128).unwrap() <= -20.0);
    }

    #[test]
    fn score_is_negated_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        assert_eq!(score_sample(&wave(a.clone()), &wave(b.clone()), 128).unwrap(), -neg_sisnr(&a, &b).unwrap().loss);
    }

    #[test]
    fn length_tolerance() {
        let x = wave(vec![0.5; 1000].into_iter().enumerate().map(|(i, v)| v * (i as f64).sin()).collect());
        let short = wave(x.samples[..900].to_vec());
        assert!(score_sample(&short, &x, 128).is_ok());
        assert!(score_sample(&wave(x.samples[..800].to_vec()), &x, 128).is_err());
    }

    #[test]
    fn hsr_counts() {
        let s = [-1.0, 4.0, 11.0];
        assert_eq!(hsr(&s, 0.0).unwrap(), 1.0 / 3.0);
        assert_eq!(hsr(&s, 5.0).unwrap(), 2.0 / 3.0);
        assert_eq!(hsr(&s, 10.0).unwrap(), 2.0 / 3.0);
        assert_eq!(hsr(&[10.0], 10.0).unwrap(), 0.0);
        assert!(hsr(&[], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn hsr_monotone_and_histogram_consistent(scores in prop::collection::vec(-30.0f64..60.0, 1..800)) {
            let r: Vec<f64> = HSR_THRESHOLDS.iter().map(|&t| hsr(&scores, t).unwrap()).collect();
            prop_assert!(r[0] <= r[1] && r[1] <= r[2]);
            let h = Histogram::from_scores(&scores);
            prop_assert_eq!(h.total(), scores.len());
            for t in [-10i64, 0, 5, 10, 30] {
                prop_assert_eq!(h.rate_below(t), hsr(&scores, t as f64).unwrap());
            }
        }
    }

    #[test]
    fn report_means() {
        let mk = |id: &str, c, s| SampleScore { id: id.into(), condition: c, sisnr_db: s };
        let r = EvalReport::from_scores(
            vec![mk("a", Condition::Noise, 10.0), mk("b", Condition::Mix, 2.0), mk("c", Condition::Noise, 4.0)],
            vec![],
        );
        assert_eq!(r.per_condition[0], ConditionSummary { condition: Condition::Noise, count: 2, mean_sisnr_db: 7.0 });
        assert_eq!(r.per_condition[1].mean_sisnr_db, 2.0);
        assert!((r.mean_sisnr_db - 16.0 / 3.0).abs() < 1e-15);
        let single = EvalReport::from_scores(vec![mk("a", Condition::Mix, 3.0), mk("b", Condition::Mix, 5.0)], vec![]);
        assert_eq!(single.mean_sisnr_db, single.per_condition[0].mean_sisnr_db);
    }

    fn manifest_with(ids: &[&str]) -> Manifest {
        Manifest::new(
            ids.iter()
                .map(|id| {
                    let mut r = MixtureRecord::new(format!("noisy/{id}.wav"), format!("clean/{id}.wav"), "e.wav", Condition::Noise);
                    r.id = Some(id.to_string());
                    r
                })
                .collect(),
            ".",
        )
    }

    #[test]
    fn hard_subset_sizes() {
        let m = manifest_with(&["a", "b", "c", "d"]);
        let scores: BTreeMap<String, f64> = [("a", 12.0), ("b", 3.0), ("c", 10.0), ("d", -4.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let sub = hard_subset(&scores, &m, 10.0).unwrap();
        assert_eq!(sub.records.iter().map(|r| r.record_id()).collect::<Vec<_>>(), vec!["b", "d"]);
        let v: Vec<f64> = scores.values().copied().collect();
        assert_eq!(sub.len() as f64 / 4.0, hsr(&v, 10.0).unwrap());
        assert_eq!(hard_subset(&scores, &m, 1000.0).unwrap().len(), 4);
        assert!(hard_subset(&scores, &m, -100.0).unwrap().is_empty());
        let mut partial = scores.clone();
        partial.remove("c");
        assert!(hard_subset(&partial, &m, 10.0).is_err());
    }

    #[test]
    fn report_from_files_lists_missing() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["clean", "enh"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        let x = wave((0..800).map(|n| 0.3 * (n as f64 * 0.05).sin()).collect());
        for id in ["a", "b"] {
            write_wav(root.join(format!("clean/{id}.wav")), &x).unwrap();
        }
        write_wav(root.join("enh/a.wav"), &x).unwrap();
        let mut m = manifest_with(&["a", "b"]);
        m.root = root.to_path_buf();
        let r = condition_report(&m, root.join("enh"), 128).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert_eq!(r.per_sample[0].sisnr_db, 60.0);
        r.write_scores_csv(root.join("s.csv")).unwrap();
        assert_eq!(read_scores_csv(root.join("s.csv")).unwrap()["a"], 60.0);
        r.write_histogram_csv(root.join("h.csv")).unwrap();
        assert_eq!(std::fs::read_to_string(root.join("h.csv")).unwrap(), "bin_lo,bin_hi,count\n60,61,1\n");
    }
}
