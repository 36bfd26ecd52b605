//! Subcommand pipeline behind the `lgs` binary.
//!
//! Every invocation writes into its own run directory
//! `<out>/<subcommand>-<stamp>[-N]` which holds `config.txt` (the resolved
//! configuration) and the subcommand's artifacts. Inputs from earlier runs
//! are named by path keys in the configuration.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use sha2::{Digest, Sha256};

use crate::bounds::{
    contraction_sweep, curves_csv, det_compounding_bound, growth_curve_experiment, simulate_det_rollout, GrowthConfig,
};
use crate::codec::{encode_dataset, reconstruction_l2re, train_codec, Codec, CodecData, LatentCache};
use crate::config::RunConfig;
use crate::error::{LgsError, Result};
use crate::flow::{train_flow_forcing, AblationMode, FlowModel};
use crate::metrics::{
    eval_horizons, export_contexts, window_starts, EvalData, EvalReport, FlowForecaster, TruthOracle,
};
use crate::nn::{load_checkpoint, save_checkpoint, ParamStore, StepLog};
use crate::pde::{generate_corpus, load_corpus, Corpus, Split, SystemSpec};
use crate::rollout::rollout_ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    GenData,
    TrainCodec,
    Encode,
    TrainFlow,
    Rollout,
    Eval,
    VerifyBounds,
    Report,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::GenData,
        Subcommand::TrainCodec,
        Subcommand::Encode,
        Subcommand::TrainFlow,
        Subcommand::Rollout,
        Subcommand::Eval,
        Subcommand::VerifyBounds,
        Subcommand::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::GenData => "gen-data",
            Subcommand::TrainCodec => "train-codec",
            Subcommand::Encode => "encode",
            Subcommand::TrainFlow => "train-flow",
            Subcommand::Rollout => "rollout",
            Subcommand::Eval => "eval",
            Subcommand::VerifyBounds => "verify-bounds",
            Subcommand::Report => "report",
        }
    }
}

impl FromStr for Subcommand {
    type Err = LgsError;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LgsError::Config(format!("unknown subcommand `{s}`")))
    }
}

/// Process exit code for a failed run: 2 for numeric failures, 1 otherwise.
pub fn exit_code(err: &LgsError) -> i32 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// Short human-readable result lines.
    pub summary: Vec<String>,
}

/// Creates `<out>/<name>-<stamp>`, appending `-1`, `-2`, ... when taken.
pub fn create_run_dir(out: &Path, name: &str, stamp: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| LgsError::io(out, e))?;
    let base = format!("{name}-{stamp}");
    for n in 0.. {
        let dir = if n == 0 {
            out.join(&base)
        } else {
            out.join(format!("{base}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(LgsError::io(&dir, e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

/// Validates the config, creates the run directory, snapshots the config
/// and runs the subcommand.
pub fn run(cmd: Subcommand, cfg: &RunConfig, out: &Path, stamp: &str) -> Result<RunOutcome> {
    cfg.validate()?;
    check_inputs(cmd, cfg)?;
    let dir = create_run_dir(out, cmd.name(), stamp)?;
    write(&dir.join("config.txt"), &cfg.to_text())?;
    info!("{} -> {}", cmd.name(), dir.display());
    let summary = match cmd {
        Subcommand::GenData => gen_data(cfg, &dir),
        Subcommand::TrainCodec => train_codec_cmd(cfg, &dir),
        Subcommand::Encode => encode_cmd(cfg, &dir),
        Subcommand::TrainFlow => train_flow_cmd(cfg, &dir),
        Subcommand::Rollout => rollout_cmd(cfg, &dir),
        Subcommand::Eval => eval_cmd(cfg, &dir),
        Subcommand::VerifyBounds => verify_bounds_cmd(cfg, &dir),
        Subcommand::Report => report_cmd(cfg, &dir),
    }?;
    write(&dir.join("summary.txt"), &(summary.join("\n") + "\n"))?;
    Ok(RunOutcome { run_dir: dir, summary })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LgsError::io(path, e))
}

/// Checks that every input the subcommand reads is configured and exists,
/// before a run directory is created.
fn check_inputs(cmd: Subcommand, cfg: &RunConfig) -> Result<()> {
    use Subcommand::*;
    let corpus = matches!(cmd, TrainCodec | Encode | Eval | Report);
    let codec = matches!(cmd, Encode | Eval | Report);
    let latents = matches!(cmd, TrainFlow | Rollout | Eval | Report);
    let flow = matches!(cmd, Rollout | Eval | Report);
    let baseline = matches!(cmd, Report);
    let need = |key: &str, value: &Option<PathBuf>, files: &[&str]| -> Result<()> {
        let p = value
            .as_ref()
            .ok_or_else(|| LgsError::Config(format!("{} needs `{key}` to be set", cmd.name())))?;
        if !p.exists() {
            return Err(LgsError::MissingInput(p.clone()));
        }
        for f in files {
            let fp = p.join(f);
            if !fp.exists() {
                return Err(LgsError::MissingInput(fp));
            }
        }
        Ok(())
    };
    if corpus {
        need("corpus_dir", &cfg.corpus_dir, &["norm_stats.txt", "train.lgs", "val.lgs", "test.lgs"])?;
    }
    if codec {
        need("codec_ckpt", &cfg.codec_ckpt, &[])?;
    }
    if latents {
        let files: &[&str] = if cmd == TrainFlow { &["train.lgsl"] } else { &["test.lgsl"] };
        need("latent_dir", &cfg.latent_dir, files)?;
    }
    if flow {
        need("flow_ckpt", &cfg.flow_ckpt, &[])?;
    }
    if baseline {
        need("baseline_ckpt", &cfg.baseline_ckpt, &[])?;
    }
    if let Some(r) = &cfg.resume {
        if !matches!(cmd, TrainCodec | TrainFlow) {
            return Err(LgsError::Config(format!("{} cannot resume", cmd.name())));
        }
        if !r.exists() {
            return Err(LgsError::MissingInput(r.clone()));
        }
    }
    Ok(())
}

fn path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| LgsError::Config(format!("`{key}` is not set")))
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let specs: Vec<SystemSpec> = cfg
        .systems
        .iter()
        .map(|s| SystemSpec::preset(s, cfg.grid))
        .collect::<Result<_>>()?;
    let out = dir.join("corpus");
    let summary = generate_corpus(&specs, cfg.per_system, cfg.n_steps, cfg.seed, &out)?;
    let mut lines = vec!["corpus written to corpus/".to_string()];
    for (label, tr, va, te) in summary.counts {
        lines.push(format!("{label}: train {tr}, val {va}, test {te}"));
    }
    Ok(lines)
}

/// Appends one CSV row per optimizer step and writes periodic checkpoints.
struct TrainLog<'a> {
    csv: BufWriter<File>,
    csv_path: PathBuf,
    ckpt_dir: PathBuf,
    arch: &'a str,
    every: u64,
}

impl<'a> TrainLog<'a> {
    fn new(dir: &Path, header: &str, arch: &'a str, every: u64) -> Result<Self> {
        let csv_path = dir.join("losses.csv");
        let f = File::create(&csv_path).map_err(|e| LgsError::io(&csv_path, e))?;
        let mut csv = BufWriter::new(f);
        writeln!(csv, "{header}").map_err(|e| LgsError::io(&csv_path, e))?;
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| LgsError::io(&ckpt_dir, e))?;
        Ok(Self {
            csv,
            csv_path,
            ckpt_dir,
            arch,
            every,
        })
    }

    fn record(&mut self, log: &StepLog, store: &ParamStore) -> Result<()> {
        let mut row = format!("{},{}", log.step, log.lr);
        for l in &log.losses {
            let _ = write!(row, ",{l}");
        }
        writeln!(self.csv, "{row}").map_err(|e| LgsError::io(&self.csv_path, e))?;
        if store.step_count.is_multiple_of(self.every) {
            let p = self.ckpt_dir.join(format!("step-{:08}.ckpt", store.step_count));
            save_checkpoint(&p, self.arch, store)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.csv.flush().map_err(|e| LgsError::io(&self.csv_path, e))
    }
}

/// Runs `train`; on a numeric failure the store (which then holds the last
/// completed step) is saved as `last_good.ckpt` before the error returns.
fn guarded_train<F>(dir: &Path, arch: &str, store: &mut ParamStore, train: F) -> Result<()>
where
    F: FnOnce(&mut ParamStore) -> Result<()>,
{
    match train(store) {
        Err(e) if e.is_numeric() => {
            let p = dir.join("last_good.ckpt");
            save_checkpoint(&p, arch, store)?;
            log::error!("numeric failure, last good state saved to {}", p.display());
            Err(e)
        }
        other => other,
    }
}

fn initial_store(cfg: &RunConfig, arch: &str, fresh: impl FnOnce() -> Vec<f64>) -> Result<ParamStore> {
    match &cfg.resume {
        Some(p) => {
            let store = load_checkpoint(p, arch)?;
            info!("resuming from {} at step {}", p.display(), store.step_count);
            Ok(store)
        }
        None => Ok(ParamStore::new(fresh())),
    }
}

fn train_codec_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let corpus = load_corpus(path(&cfg.corpus_dir, "corpus_dir")?)?;
    let codec = Codec::new(cfg.codec())?;
    let arch = codec.arch();
    let data = CodecData::new(&corpus.train, &corpus.norm)?.with_shift_augment(cfg.shift_augment);
    let tc = cfg.codec_train();
    let mut store = initial_store(cfg, &arch, || codec.init_params(cfg.seed))?;
    let mut log = TrainLog::new(dir, "step,lr,total,recon_mse,kl", &arch, cfg.checkpoint_every)?;
    guarded_train(dir, &arch, &mut store, |s| {
        train_codec(&codec, &data, &tc, s, |l, s| log.record(l, s))
    })?;
    log.finish()?;
    let ckpt = dir.join("codec.ckpt");
    save_checkpoint(&ckpt, &arch, &store)?;
    let val = reconstruction_l2re(&codec, &store.params, &corpus.norm, &corpus.val)?;
    write(&dir.join("codec_report.txt"), &format!("validation reconstruction L2RE: {val}\n"))?;
    Ok(vec![
        "codec checkpoint: codec.ckpt".to_string(),
        format!("validation reconstruction L2RE: {:.3}%", 100.0 * val),
    ])
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LgsError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn load_codec(cfg: &RunConfig) -> Result<(Codec, ParamStore)> {
    let codec = Codec::new(cfg.codec())?;
    let store = load_checkpoint(path(&cfg.codec_ckpt, "codec_ckpt")?, &codec.arch())?;
    Ok((codec, store))
}

fn encode_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let corpus = load_corpus(path(&cfg.corpus_dir, "corpus_dir")?)?;
    let (codec, store) = load_codec(cfg)?;
    let out = dir.join("latents");
    fs::create_dir_all(&out).map_err(|e| LgsError::io(&out, e))?;
    let mut lines = vec!["latents written to latents/".to_string()];
    for split in Split::ALL {
        let cache = encode_dataset(&codec, &store.params, &corpus.norm, corpus.split(split))?;
        cache.write(&out.join(format!("{}.lgsl", split.name())))?;
        lines.push(format!("{}: {} trajectories", split.name(), cache.trajectories.len()));
    }
    let sum = sha256_hex(path(&cfg.codec_ckpt, "codec_ckpt")?)?;
    write(&out.join("codec.sha256"), &format!("{sum}\n"))?;
    Ok(lines)
}

fn train_flow_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let latent_dir = path(&cfg.latent_dir, "latent_dir")?;
    let codec_sum = match &cfg.codec_ckpt {
        Some(p) => {
            let sum = sha256_hex(p)?;
            let recorded = latent_dir.join("codec.sha256");
            if recorded.exists() {
                let text = fs::read_to_string(&recorded).map_err(|e| LgsError::io(&recorded, e))?;
                if text.trim() != sum {
                    return Err(LgsError::Config(format!(
                        "latents in {} were encoded with a different codec than {}",
                        latent_dir.display(),
                        p.display()
                    )));
                }
            }
            Some((p.clone(), sum))
        }
        None => None,
    };
    let cache = LatentCache::read(&latent_dir.join("train.lgsl"))?;
    let model = FlowModel::new(cfg.flow())?;
    let arch = model.arch();
    let tc = cfg.flow_train();
    let mut store = initial_store(cfg, &arch, || model.init_params(cfg.seed))?;
    let mut log = TrainLog::new(dir, "step,lr,loss", &arch, cfg.checkpoint_every)?;
    guarded_train(dir, &arch, &mut store, |s| {
        train_flow_forcing(&model, &cache, &tc, s, |l, s| log.record(l, s))
    })?;
    log.finish()?;
    let ckpt = dir.join("flow.ckpt");
    save_checkpoint(&ckpt, &arch, &store)?;
    let mut lines = vec![format!("{} flow checkpoint: flow.ckpt", cfg.mode)];
    if let Some((p, before)) = codec_sum {
        let after = sha256_hex(&p)?;
        if after != before {
            return Err(LgsError::Precondition(format!("codec checkpoint {} changed during training", p.display())));
        }
        write(&dir.join("codec.sha256"), &format!("{after}\n"))?;
        lines.push(format!("codec checksum unchanged: {after}"));
    }
    Ok(lines)
}

fn load_flow(cfg: &RunConfig, mode: AblationMode, ckpt: &Path) -> Result<(FlowModel, ParamStore)> {
    let model = FlowModel::new(cfg.flow_with_mode(mode))?;
    let store = load_checkpoint(ckpt, &model.arch())?;
    Ok((model, store))
}

fn rollout_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let cache = LatentCache::read(&path(&cfg.latent_dir, "latent_dir")?.join("test.lgsl"))?;
    let (model, store) = load_flow(cfg, cfg.mode, path(&cfg.flow_ckpt, "flow_ckpt")?)?;
    let rc = cfg.rollout();
    let l = cfg.context_length;
    let windows: Vec<(usize, usize)> = cache
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, tr)| window_starts(tr.len(), l, rc.horizon, cfg.eval_stride).into_iter().map(move |s| (i, s)))
        .collect();
    if windows.is_empty() {
        return Err(LgsError::InsufficientData(format!(
            "test latents are shorter than context {l} + horizon {}",
            rc.horizon
        )));
    }
    let mut csv = String::from("window,trajectory,start,step,spread");
    for j in 0..cfg.d_latent {
        let _ = write!(csv, ",mean_{j}");
    }
    csv.push('\n');
    let mut spread_sum = vec![0.0; rc.horizon];
    for (id, &(ti, start)) in windows.iter().enumerate() {
        let history = &cache.trajectories[ti][start..start + l];
        let e = rollout_ensemble(&model, &store.params, history, &rc, &[id as u64])?;
        for (h, mean) in e.mean.iter().enumerate() {
            let spread = e.spread.as_ref().map_or(0.0, |s| s[h]);
            spread_sum[h] += spread;
            let _ = write!(csv, "{id},{ti},{start},{},{spread}", h + 1);
            for v in mean {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    write(&dir.join("rollouts.csv"), &csv)?;
    let n = windows.len() as f64;
    let spread: Vec<String> = spread_sum.iter().map(|s| format!("{:.3e}", s / n)).collect();
    Ok(vec![
        format!("{} windows, {} members each", windows.len(), rc.ensemble_size),
        format!("mean ensemble spread per step: {}", spread.join(" ")),
    ])
}

struct EvalInputs {
    corpus: Corpus,
    latents: LatentCache,
    codec: Codec,
    codec_store: ParamStore,
}

impl EvalInputs {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let corpus = load_corpus(path(&cfg.corpus_dir, "corpus_dir")?)?;
        let latents = LatentCache::read(&path(&cfg.latent_dir, "latent_dir")?.join("test.lgsl"))?;
        let (codec, codec_store) = load_codec(cfg)?;
        Ok(Self {
            corpus,
            latents,
            codec,
            codec_store,
        })
    }

    fn data(&self) -> EvalData<'_> {
        EvalData {
            trajectories: &self.corpus.test,
            latents: &self.latents,
            norm: &self.corpus.norm,
            codec: &self.codec,
            codec_params: &self.codec_store.params,
        }
    }
}

fn all_steps(cfg: &RunConfig) -> Vec<usize> {
    (1..=cfg.horizon).collect()
}

fn eval_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let inputs = EvalInputs::load(cfg)?;
    let data = inputs.data();
    let (model, store) = load_flow(cfg, cfg.mode, path(&cfg.flow_ckpt, "flow_ckpt")?)?;
    let fc = FlowForecaster {
        model: &model,
        params: &store.params,
        cfg: cfg.rollout(),
    };
    let report = eval_horizons(&fc, &data, &cfg.horizons, cfg.eval_stride)?;
    let oracle = eval_horizons(
        &TruthOracle {
            context_length: cfg.context_length,
        },
        &data,
        &cfg.horizons,
        cfg.eval_stride,
    )?;
    write(&dir.join("eval.csv"), &report.to_csv())?;
    write(&dir.join("eval_curves.csv"), &report.curves_csv())?;
    write(&dir.join("eval.txt"), &report.to_table())?;
    write(&dir.join("oracle.csv"), &oracle.to_csv())?;
    let mut lines = vec![format!("{} model", cfg.mode)];
    lines.extend(report.to_table().lines().map(String::from));
    match export_contexts(&model, &store.params, &inputs.corpus.test, &inputs.latents, &cfg.rollout(), cfg.eval_stride)
    {
        Ok(csv) => {
            write(&dir.join("contexts.csv"), &csv)?;
            lines.push("contexts exported to contexts.csv".into());
        }
        Err(LgsError::NoContextAvailable(m)) => lines.push(format!("no context export: mode {m} keeps no context")),
        Err(e) => return Err(e),
    }
    Ok(lines)
}

fn verify_bounds_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let mut lines = Vec::new();

    let curve = simulate_det_rollout(cfg.bound_lipschitz, cfg.bound_bias, cfg.bound_horizon, cfg.seed)?;
    let bound = det_compounding_bound(cfg.bound_lipschitz, &vec![cfg.bound_bias; cfg.bound_horizon])?;
    let mut text = format!(
        "affine surrogate f(x) = L x + b against truth x -> L x\nL = {}, b = {}, horizon = {}\nstep,empirical,bound,gap\n",
        cfg.bound_lipschitz, cfg.bound_bias, cfg.bound_horizon
    );
    let mut max_gap: f64 = 0.0;
    for (p, b) in curve.points.iter().zip(&bound) {
        let gap = (p.mean_error - b).abs();
        max_gap = max_gap.max(gap);
        let _ = writeln!(text, "{},{},{},{:e}", p.step, p.mean_error, b, gap);
    }
    let _ = writeln!(text, "max |empirical - bound| = {max_gap:e}");
    if curve.truncated {
        let _ = writeln!(text, "curve truncated after {} steps on overflow", curve.points.len());
    }
    write(&dir.join("affine_bound.txt"), &text)?;
    write(&dir.join("affine_curve.csv"), &curves_csv(&[&curve]))?;
    lines.push(format!("affine bound: max |empirical - bound| = {max_gap:e} over {} steps", curve.points.len()));

    let c = contraction_sweep(cfg.contraction_trials, cfg.seed)?;
    write(
        &dir.join("contraction.txt"),
        &format!(
            "softening contraction | ||soft(x+d) - soft(x)|| - (1-k)||d|| | under shared noise\ntrials = {}\nmax residual = {:e}\nworst trial = {}\n",
            c.trials, c.max_residual, c.worst_trial
        ),
    )?;
    lines.push(format!("contraction identity: max residual {:e} over {} trials", c.max_residual, c.trials));

    if let (Some(latent_dir), Some(fp), Some(bp)) = (&cfg.latent_dir, &cfg.flow_ckpt, &cfg.baseline_ckpt) {
        let cache = LatentCache::read(&latent_dir.join("test.lgsl"))?;
        let (fm, fs) = load_flow(cfg, cfg.mode, fp)?;
        let (bm, bs) = load_flow(cfg, AblationMode::A4Regression, bp)?;
        let gc = GrowthConfig {
            rollout: cfg.rollout(),
            stride: cfg.eval_stride,
            probe_scale: cfg.probe_scale,
        };
        let rep = growth_curve_experiment((&fm, &fs.params), (&bm, &bs.params), &cache, &gc)?;
        write(&dir.join("growth_curves.csv"), &rep.to_csv())?;
        write(&dir.join("growth_fit.txt"), &rep.summary())?;
        lines.push(format!(
            "growth fit: a = {:.4} (se {:.4}), 1 - k = {:.4}, (1 - k) L_T = {:.4}",
            rep.fit.a,
            rep.fit.se_a,
            rep.one_minus_k,
            rep.one_minus_k * rep.lipschitz
        ));
    } else {
        lines.push("growth curves skipped: set latent_dir, flow_ckpt and baseline_ckpt to run them".into());
    }
    Ok(lines)
}

/// Stability comparison of a flow model against the regression baseline
/// on per-step mean decoded L2RE.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCheck {
    /// Unweighted system mean of the flow curve at steps 5 and 10.
    pub flow_delta5: f64,
    pub flow_delta10: f64,
    pub flow_plateaus: bool,
    pub baseline_strictly_increasing: bool,
    /// `(system, flow, baseline)` at the last step.
    pub last_step: Vec<(String, f64, f64)>,
    pub flow_wins: usize,
}

pub fn stability_check(flow: &EvalReport, baseline: &EvalReport) -> Result<StabilityCheck> {
    let h = flow.curves.first().map_or(0, |c| c.decoded.len());
    if h < 10 || baseline.curves.iter().any(|c| c.decoded.len() < 10) {
        return Err(LgsError::InsufficientData("stability check needs curves over 10 steps".into()));
    }
    let mean_at = |r: &EvalReport, s: usize| r.curves.iter().map(|c| c.decoded[s - 1]).sum::<f64>() / r.curves.len() as f64;
    let flow_delta5 = mean_at(flow, 5);
    let flow_delta10 = mean_at(flow, 10);
    let mean_curve: Vec<f64> = (1..=10).map(|s| mean_at(baseline, s)).collect();
    let baseline_strictly_increasing = mean_curve.windows(2).all(|w| w[1] > w[0]);
    let mut last_step = Vec::new();
    for fc in &flow.curves {
        let bc = baseline
            .curves
            .iter()
            .find(|c| c.system == fc.system)
            .ok_or_else(|| LgsError::Shape(format!("baseline has no curve for {}", fc.system)))?;
        last_step.push((fc.system.clone(), fc.decoded[9], bc.decoded[9]));
    }
    let flow_wins = last_step.iter().filter(|(_, f, b)| f <= b).count();
    Ok(StabilityCheck {
        flow_delta5,
        flow_delta10,
        flow_plateaus: flow_delta10 <= 3.0 * flow_delta5,
        baseline_strictly_increasing,
        last_step,
        flow_wins,
    })
}

fn report_cmd(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let inputs = EvalInputs::load(cfg)?;
    let data = inputs.data();
    let (fm, fs) = load_flow(cfg, cfg.mode, path(&cfg.flow_ckpt, "flow_ckpt")?)?;
    let (bm, bs) = load_flow(cfg, AblationMode::A4Regression, path(&cfg.baseline_ckpt, "baseline_ckpt")?)?;
    let steps = all_steps(cfg);
    let rc = cfg.rollout();
    let flow = eval_horizons(
        &FlowForecaster {
            model: &fm,
            params: &fs.params,
            cfg: rc,
        },
        &data,
        &steps,
        cfg.eval_stride,
    )?;
    let base = eval_horizons(
        &FlowForecaster {
            model: &bm,
            params: &bs.params,
            cfg: rc,
        },
        &data,
        &steps,
        cfg.eval_stride,
    )?;
    write(&dir.join("flow_curves.csv"), &flow.curves_csv())?;
    write(&dir.join("baseline_curves.csv"), &base.curves_csv())?;

    let mut text = String::from("decoded L2RE (%) per rollout step\n");
    for (label, rep) in [(cfg.mode.name(), &flow), ("a4", &base)] {
        for c in &rep.curves {
            let vals: Vec<String> = c.decoded.iter().map(|v| format!("{:.2}", 100.0 * v)).collect();
            let _ = writeln!(text, "{label:>5} {:>14}: {}", c.system, vals.join(" "));
        }
    }
    let mut lines = Vec::new();
    match stability_check(&flow, &base) {
        Ok(s) => {
            let _ = writeln!(
                text,
                "flow mean delta5 = {:.4}, delta10 = {:.4}, delta10 <= 3 delta5: {}",
                s.flow_delta5, s.flow_delta10, s.flow_plateaus
            );
            let _ = writeln!(text, "baseline mean curve strictly increasing: {}", s.baseline_strictly_increasing);
            for (sys, f, b) in &s.last_step {
                let _ = writeln!(text, "step 10 {sys}: flow {:.4} baseline {:.4}", f, b);
            }
            let _ = writeln!(text, "flow <= baseline at step 10 on {} of {} systems", s.flow_wins, s.last_step.len());
            lines.push(format!(
                "flow plateaus: {}, baseline increasing: {}, flow wins at step 10: {}/{}",
                s.flow_plateaus,
                s.baseline_strictly_increasing,
                s.flow_wins,
                s.last_step.len()
            ));
        }
        Err(LgsError::InsufficientData(m)) => {
            let _ = writeln!(text, "stability check skipped: {m}");
            lines.push(format!("stability check skipped: {m}"));
        }
        Err(e) => return Err(e),
    }
    write(&dir.join("report.txt"), &text)?;
    Ok(lines)
}
