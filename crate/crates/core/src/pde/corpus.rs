use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{LgsError, Result};
use crate::pde::io::{read_trajectories, write_trajectories};
use crate::pde::system::{SystemSpec, SystemTag};
use crate::pde::trajectory::{generate_trajectory, Trajectory};
use crate::pde::CHANNELS;

/// Channels whose standard deviation falls below this are treated as constant.
const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.lgs", self.name())
    }
}

/// Train/val/test counts for `per_system` trajectories in an 8:1:1 ratio.
pub fn split_counts(per_system: usize) -> Result<(usize, usize, usize)> {
    if per_system < 10 {
        return Err(LgsError::InsufficientData(format!(
            "need at least 10 trajectories per system for an 8:1:1 split, got {per_system}"
        )));
    }
    let val = per_system / 10;
    let test = per_system / 10;
    Ok((per_system - val - test, val, test))
}

/// Per-channel normalization statistics of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; CHANNELS],
            std: vec![1.0; CHANNELS],
        }
    }

    pub fn compute(trajectories: &[Trajectory]) -> Result<Self> {
        let mut sum = [0.0f64; CHANNELS];
        let mut sum_sq = [0.0f64; CHANNELS];
        let mut count = [0usize; CHANNELS];
        for traj in trajectories {
            let points = traj.tag.points();
            for state in &traj.states {
                for c in 0..CHANNELS {
                    for &v in &state[c * points..(c + 1) * points] {
                        sum[c] += v;
                        sum_sq[c] += v * v;
                    }
                    count[c] += points;
                }
            }
        }
        if count[0] == 0 {
            return Err(LgsError::InsufficientData("no states to normalize".into()));
        }
        let mut mean = Vec::with_capacity(CHANNELS);
        let mut std = Vec::with_capacity(CHANNELS);
        for c in 0..CHANNELS {
            let n = count[c] as f64;
            let m = sum[c] / n;
            let var = (sum_sq[c] / n - m * m).max(0.0);
            let mut s = var.sqrt();
            if s < DEGENERATE_STD {
                log::warn!("channel {c} is constant (std {s:.3e}); normalizing with std = 1");
                s = 1.0;
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, tag: SystemTag, state: &[f64]) -> Vec<f64> {
        let points = tag.points();
        state
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / points;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }

    pub fn denormalize(&self, tag: SystemTag, state: &[f64]) -> Vec<f64> {
        let points = tag.points();
        state
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / points;
                v * self.std[c] + self.mean[c]
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("channels = {}\n", self.mean.len());
        for c in 0..self.mean.len() {
            let _ = writeln!(s, "mean.{c} = {:?}", self.mean[c]);
            let _ = writeln!(s, "std.{c} = {:?}", self.std[c]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LgsError::Config(format!("bad norm stats line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| LgsError::Config(format!("norm stats missing `{k}`")))?
                .parse()
                .map_err(|_| LgsError::Config(format!("norm stats `{k}` is not a number")))
        };
        let channels = get("channels")? as usize;
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for c in 0..channels {
            mean.push(get(&format!("mean.{c}"))?);
            let s = get(&format!("std.{c}"))?;
            if s <= 0.0 {
                return Err(LgsError::Config(format!("std.{c} must be positive")));
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub norm: NormStats,
    pub counts: Vec<(String, usize, usize, usize)>,
}

/// Simulate `per_system` trajectories of `n_steps` steps for every spec, split
/// each system 8:1:1 and write `train.lgs`, `val.lgs`, `test.lgs`,
/// `norm_stats.txt` and `corpus.txt` into `out_dir`.
pub fn generate_corpus(
    specs: &[SystemSpec],
    per_system: usize,
    n_steps: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusSummary> {
    let (n_train, n_val, _) = split_counts(per_system)?;
    let work: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..per_system).map(move |i| (s, i)))
        .collect();
    let trajectories: Vec<Trajectory> = work
        .par_iter()
        .map(|&(s, i)| {
            let traj_seed = crate::rng::mix(seed, &[s as u64, i as u64]);
            generate_trajectory(&specs[s], traj_seed, n_steps)
        })
        .collect::<Result<_>>()?;

    let mut splits: [Vec<Trajectory>; 3] = Default::default();
    let mut counts = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        let chunk = &trajectories[s * per_system..(s + 1) * per_system];
        splits[0].extend_from_slice(&chunk[..n_train]);
        splits[1].extend_from_slice(&chunk[n_train..n_train + n_val]);
        splits[2].extend_from_slice(&chunk[n_train + n_val..]);
        counts.push((
            spec.tag().label(),
            n_train,
            n_val,
            per_system - n_train - n_val,
        ));
    }
    let norm = NormStats::compute(&splits[0])?;

    fs::create_dir_all(out_dir).map_err(|e| LgsError::io(out_dir, e))?;
    for (split, trajs) in Split::ALL.iter().zip(&splits) {
        write_trajectories(&out_dir.join(split.file_name()), trajs)?;
    }
    write_text(&out_dir.join("norm_stats.txt"), &norm.to_text())?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "seed = {seed}");
    let _ = writeln!(manifest, "per_system = {per_system}");
    let _ = writeln!(manifest, "n_steps = {n_steps}");
    let _ = writeln!(manifest, "system_sampling = uniform");
    for (spec, (label, tr, va, te)) in specs.iter().zip(&counts) {
        let _ = writeln!(
            manifest,
            "system = {label} grid={} dt={:?} params={:?} train={tr} val={va} test={te}",
            spec.grid_size, spec.dt, spec.params
        );
    }
    write_text(&out_dir.join("corpus.txt"), &manifest)?;
    Ok(CorpusSummary { norm, counts })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LgsError::io(path, e))
}

/// A corpus loaded back from disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub norm: NormStats,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn load_norm(dir: &Path) -> Result<NormStats> {
    let path = dir.join("norm_stats.txt");
    if !path.exists() {
        return Err(LgsError::MissingInput(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| LgsError::io(&path, e))?;
    NormStats::from_text(&text)
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Trajectory>> {
    read_trajectories(&dir.join(split.file_name()))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    Ok(Corpus {
        dir: dir.to_path_buf(),
        norm: load_norm(dir)?,
        train: load_split(dir, Split::Train)?,
        val: load_split(dir, Split::Val)?,
        test: load_split(dir, Split::Test)?,
    })
}
