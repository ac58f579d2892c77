//! `pse` subcommands: simulate, train, enhance, eval, synth-pool.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pse_core::audio::{load_manifest, read_wav, save_manifest, write_wav, Waveform};
use pse_core::dsp::Stft;
use pse_core::evaluator::{condition_report, hard_subset, read_scores_csv, EvalReport, HARD_THRESHOLD_DB};
use pse_core::model::{enhance, load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use pse_core::prep::{dac, mmse_lsa, spectral_subtract, DacConfig};
use pse_core::simulator::{simulate, ConditionCounts};
use pse_core::synth::{write_synth_pools, SynthPoolSpec};
use pse_core::trainer::{
    load_examples, prepare_dataset, train_stage1, train_stage2, write_batch_reports_csv, write_history_csv, EpochRecord,
    StageOutcome,
};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pse", version, about = "Personalized speech enhancement toolkit")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a noise/mix/nmix dataset with a manifest.
    Simulate(SimulateArgs),
    /// Two-stage training (TF-loss, then adaptive focal re-weighting).
    Train(TrainArgs),
    /// Run a checkpoint over a manifest and write enhanced audio.
    Enhance(EnhanceArgs),
    /// Score enhanced audio: SISNR, hard-sample rates, histogram.
    Eval(EvalArgs),
    /// Write synthetic speaker and noise pools for demos and tests.
    SynthPool(SynthPoolArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Tf,
    Aft,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrepArg {
    None,
    Dac,
    Ss,
    Lsa,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    #[arg(long)]
    pub rir_dir: Option<PathBuf>,
    /// Records per condition as NOISE,MIX,NMIX.
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<ConditionCounts>,
    /// SNR range as LO:HI in dB.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub snr: Option<(f64, f64)>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub val_manifest: PathBuf,
    #[arg(long, value_enum)]
    pub dac: Option<Toggle>,
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub stage: StageArg,
    /// Stage-1 checkpoint to continue from (required for `--stage aft`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    /// Use raw z-scores in the focal weights.
    #[arg(long)]
    pub unclamped: bool,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub prep: PrepArg,
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub enhanced_dir: PathBuf,
    /// Per-sample scores of a baseline system; enables the hard-subset report.
    #[arg(long)]
    pub baseline_scores: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthPoolArgs {
    #[arg(long, default_value_t = 6)]
    pub speakers: usize,
    #[arg(long, default_value_t = 4)]
    pub utterances: usize,
    #[arg(long, default_value_t = 2)]
    pub noises_per_class: usize,
    #[arg(long, default_value_t = 4.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_counts(s: &str) -> std::result::Result<ConditionCounts, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts[..] else { return Err(format!("expected NOISE,MIX,NMIX, got {s:?}")) };
    let n = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(ConditionCounts { noise: n(a)?, mix: n(b)?, nmix: n(c)? })
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let f = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (lo, hi) = (f(lo)?, f(hi)?);
    if lo > hi {
        return Err(format!("range {lo}:{hi} is reversed"));
    }
    Ok((lo, hi))
}

/// How a command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Completed, but some inputs were skipped.
    Partial,
}

impl Status {
    pub fn exit_code(self) -> ExitCode {
        match self {
            Status::Success => ExitCode::SUCCESS,
            Status::Partial => ExitCode::from(1),
        }
    }
}

/// Exit code for a failed invocation.
pub const EXIT_INVALID: u8 = 2;

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::SynthPool(a) => cmd_synth_pool(&a),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let sim = &mut cfg.sim;
    if let Some(d) = &args.clean_dir {
        sim.clean_dir = Some(d.clone());
    }
    if let Some(d) = &args.noise_dir {
        sim.noise_dir = Some(d.clone());
    }
    if let Some(d) = &args.rir_dir {
        sim.rir_dir = Some(d.clone());
    }
    if let Some(c) = args.counts {
        sim.counts = c;
    }
    if let Some((lo, hi)) = args.snr {
        sim.snr_lo = lo;
        sim.snr_hi = hi;
    }
    if let Some(s) = args.seconds {
        sim.seconds = s;
    }
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    if sim.clean_dir.is_none() {
        bail!("--clean-dir is required\n\nUsage: pse simulate --clean-dir <DIR> --noise-dir <DIR> --out <DIR> [--counts N,M,K] [--snr LO:HI] [--seconds S] [--seed S]");
    }
    create_out(&args.out)?;
    cfg.write_snapshot(&args.out)?;
    let manifest = simulate(&cfg.sim, &args.out)?;
    log::info!("wrote {} records to {}", manifest.len(), args.out.display());
    Ok(Status::Success)
}

fn train_meta(stage: &str, outcome: &StageOutcome<f64>, cfg: &RunConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("stage".into(), json!(stage));
    m.insert("best_val_loss".into(), json!(outcome.best_val));
    m.insert("epochs".into(), json!(outcome.history.len()));
    m.insert("final_lr".into(), json!(outcome.final_lr));
    m.insert("dac".into(), json!(cfg.train.dac_enabled));
    m.insert("dac_j".into(), json!(cfg.train.dac_j));
    m.insert("dac_k".into(), json!(cfg.train.dac_k));
    m.insert("seed".into(), json!(cfg.train.seed));
    m
}

fn load_split(path: &Path, what: &str) -> Result<(Vec<pse_core::trainer::Example<f64>>, usize)> {
    let manifest = load_manifest(path).with_context(|| format!("loading {what} manifest"))?;
    let (examples, skipped) = load_examples(&manifest);
    if examples.is_empty() {
        bail!("{what} manifest {} has no readable records", path.display());
    }
    Ok((examples, skipped.len()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(d) = args.dac {
        t.dac_enabled = d == Toggle::On;
    }
    if let Some(j) = args.j {
        t.dac_j = j;
    }
    if let Some(k) = args.k {
        t.dac_k = k;
    }
    if let Some(s) = args.seed {
        t.seed = s;
    }
    if let Some(n) = args.threads {
        t.threads = n;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = args.lr {
        t.lr0 = lr;
    }
    if let Some(e) = args.stage1_epochs {
        t.stage1_max_epochs = e;
    }
    if let Some(e) = args.stage2_epochs {
        t.stage2_max_epochs = e;
    }
    if let Some(lr) = args.stage2_lr {
        t.stage2_lr = Some(lr);
    }
    if args.unclamped {
        t.unclamped = true;
    }
    if let Some(e) = args.emb_dim {
        cfg.model.emb_dim = e;
    }
    if let Some(h) = args.hidden {
        cfg.model.hidden = h;
    }
    cfg.train.validate()?;
    if args.stage == StageArg::Aft && args.init.is_none() {
        bail!("--stage aft continues a stage-1 model; pass it with --init");
    }

    create_out(&args.out)?;
    cfg.write_snapshot(&args.out)?;
    let stft = Stft::<f64>::new(cfg.stft)?;
    let dims = cfg.model.dims(&cfg.stft);
    let (train_ex, skipped_train) = load_split(&args.manifest, "training")?;
    let (val_ex, skipped_val) = load_split(&args.val_manifest, "validation")?;
    let train = prepare_dataset(&train_ex, &cfg.train, &stft)?;
    let val = prepare_dataset(&val_ex, &cfg.train, &stft)?;
    drop((train_ex, val_ex));

    let mut history: Vec<EpochRecord<f64>> = Vec::new();
    let mut aborted = false;
    let (mut params, mut lr) = match &args.init {
        Some(p) => {
            let ck = load_checkpoint::<f64>(p, Some(dims))?;
            if ck.stft != cfg.stft {
                bail!("checkpoint {} was trained with {:?}, config has {:?}", p.display(), ck.stft, cfg.stft);
            }
            let lr = ck.meta.get("final_lr").and_then(Value::as_f64).unwrap_or(cfg.train.lr0);
            (ck.params, lr)
        }
        None => (ModelParams::init(dims, cfg.train.seed), cfg.train.lr0),
    };

    if matches!(args.stage, StageArg::Tf | StageArg::Both) {
        let out = train_stage1(params, &stft, &train, &val, &cfg.train)?;
        save_checkpoint(
            args.out.join("stage1.json"),
            &Checkpoint { params: out.params.clone(), stft: cfg.stft, meta: train_meta("tf", &out, &cfg) },
        )?;
        if let Some(msg) = &out.aborted {
            log::error!("stage 1 aborted: {msg}");
            aborted = true;
        }
        params = out.params;
        lr = out.final_lr;
        history.extend(out.history);
    }
    if matches!(args.stage, StageArg::Aft | StageArg::Both) && !aborted {
        let out = train_stage2(params, &stft, &train, &val, &cfg.train, lr)?;
        save_checkpoint(
            args.out.join("stage2.json"),
            &Checkpoint { params: out.params.clone(), stft: cfg.stft, meta: train_meta("aft", &out, &cfg) },
        )?;
        write_batch_reports_csv(args.out.join("aft_weights.csv"), &out.history)?;
        if let Some(msg) = &out.aborted {
            log::error!("stage 2 aborted: {msg}");
            aborted = true;
        }
        params = out.params;
        history.extend(out.history);
    }
    let final_meta = json!({ "stages": format!("{:?}", args.stage).to_lowercase() });
    let Value::Object(meta) = final_meta else { unreachable!() };
    save_checkpoint(args.out.join("model.json"), &Checkpoint { params, stft: cfg.stft, meta })?;
    write_history_csv(args.out.join("history.csv"), &history)?;
    if skipped_train + skipped_val > 0 || aborted {
        return Ok(Status::Partial);
    }
    Ok(Status::Success)
}

pub fn cmd_enhance(args: &EnhanceArgs) -> Result<Status> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let ck = load_checkpoint::<f64>(&args.checkpoint, None)?;
    let stft = Stft::<f64>::new(ck.stft)?;
    let manifest = load_manifest(&args.manifest)?;
    let dac_cfg = DacConfig::new(args.j.unwrap_or(cfg.train.dac_j), args.k.unwrap_or(cfg.train.dac_k), ck.stft.hop);
    create_out(&args.out)?;
    let mut snapshot = cfg.clone();
    snapshot.stft = ck.stft;
    snapshot.train.dac_j = dac_cfg.j_frames;
    snapshot.train.dac_k = dac_cfg.k_frames;
    snapshot.write_snapshot(&args.out)?;

    let mut failed = 0usize;
    for rec in &manifest.records {
        let id = rec.record_id();
        let result = (|| -> Result<()> {
            let noisy: Waveform<f64> = read_wav(manifest.resolve(&rec.noisy))?;
            let enroll: Waveform<f64> = read_wav(manifest.resolve(&rec.enroll))?;
            let (noisy, enroll) = match args.prep {
                PrepArg::None => (noisy, enroll),
                PrepArg::Dac => {
                    let e = dac(&enroll, &noisy, &dac_cfg)?;
                    (noisy, e)
                }
                PrepArg::Ss => (spectral_subtract(&noisy, &cfg.ss, ck.stft)?, enroll),
                PrepArg::Lsa => (mmse_lsa(&noisy, &cfg.lsa, ck.stft)?, enroll),
            };
            let est = enhance(&noisy, &enroll, &ck.params, &stft)?;
            let name = Path::new(&rec.noisy).file_name().ok_or_else(|| anyhow!("empty noisy path"))?;
            write_wav(args.out.join(name), &est)?;
            Ok(())
        })();
        if let Err(e) = result {
            log::warn!("record {id}: {e:#}");
            failed += 1;
        }
    }
    log::info!("enhanced {} of {} records", manifest.len() - failed, manifest.len());
    Ok(if failed > 0 { Status::Partial } else { Status::Success })
}

fn write_report(report: &EvalReport, out: &Path, prefix: &str) -> Result<()> {
    report.write_scores_csv(out.join(format!("{prefix}scores.csv")))?;
    report.write_summary_json(out.join(format!("{prefix}summary.json")))?;
    report.write_histogram_csv(out.join(format!("{prefix}histogram.csv")))?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Status> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let manifest = load_manifest(&args.manifest)?;
    create_out(&args.out)?;
    cfg.write_snapshot(&args.out)?;
    let report = condition_report(&manifest, &args.enhanced_dir, cfg.stft.hop)?;
    write_report(&report, &args.out, "")?;
    print!("{}", report.summary_table());
    for id in &report.missing {
        eprintln!("missing enhanced file for record {id}");
    }
    if let Some(path) = &args.baseline_scores {
        let baseline = read_scores_csv(path)?;
        let hard = hard_subset(&baseline, &manifest, HARD_THRESHOLD_DB)?;
        save_manifest(&hard.with_resolved_paths(), args.out.join("hard_manifest.jsonl"))?;
        let keep: std::collections::HashSet<String> = hard.records.iter().map(|r| r.record_id()).collect();
        let per_sample = report.per_sample.iter().filter(|s| keep.contains(&s.id)).cloned().collect();
        let hard_report = EvalReport::from_scores(per_sample, Vec::new());
        write_report(&hard_report, &args.out, "hard_")?;
        println!("hard subset (baseline SISNR < {HARD_THRESHOLD_DB} dB): {} of {} records", hard.len(), manifest.len());
        if hard_report.count > 0 {
            print!("{}", hard_report.summary_table());
        }
    }
    Ok(if report.missing.is_empty() { Status::Success } else { Status::Partial })
}

pub fn cmd_synth_pool(args: &SynthPoolArgs) -> Result<Status> {
    let spec = SynthPoolSpec {
        speakers: args.speakers,
        utterances_per_speaker: args.utterances,
        noises_per_class: args.noises_per_class,
        seconds: args.seconds,
        seed: args.seed,
        ..SynthPoolSpec::default()
    };
    write_synth_pools(&args.out, &spec)?;
    Ok(Status::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_ranges() {
        assert_eq!(parse_counts("5,2,1").unwrap(), ConditionCounts::default());
        assert!(parse_counts("5,2").is_err());
        assert_eq!(parse_range("-5:20").unwrap(), (-5.0, 20.0));
        assert!(parse_range("3:1").is_err());
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["pse", "train", "--manifest", "a", "--val-manifest", "b", "--out", "o", "--dac", "on"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.stage, StageArg::Both);
        assert_eq!(t.dac, Some(Toggle::On));
    }
}
