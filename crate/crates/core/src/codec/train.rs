//! Stage I optimization of the codec.

use rand::Rng;

use super::model::{codec_loss, Codec};
use crate::error::{LgsError, Result};
use crate::metrics::l2re;
use crate::nn::{batch_gradients, train_loop, OptimizerConfig, ParamStore, StepLog};
use crate::pde::{from_canvas, to_canvas, NormStats, Trajectory};
use crate::rng;

/// Normalized canvases grouped by system, then trajectory, then step.
#[derive(Debug, Clone)]
pub struct CodecData {
    pub labels: Vec<String>,
    pub states: Vec<Vec<Vec<Vec<f64>>>>,
    pub grid: usize,
    /// Apply a random periodic shift to every drawn state. The fields are
    /// statistically homogeneous on the torus, so shifted states are draws
    /// from the same distribution.
    pub shift_augment: bool,
}

impl CodecData {
    pub fn new(trajectories: &[Trajectory], norm: &NormStats) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(LgsError::InsufficientData("codec training set is empty".into()));
        }
        let mut labels: Vec<String> = Vec::new();
        let mut states: Vec<Vec<Vec<Vec<f64>>>> = Vec::new();
        for t in trajectories {
            let label = t.tag.label();
            let slot = match labels.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    labels.push(label);
                    states.push(Vec::new());
                    labels.len() - 1
                }
            };
            let canvases = t
                .states
                .iter()
                .map(|s| to_canvas(t.tag, &norm.normalize(t.tag, s)))
                .collect::<Result<Vec<_>>>()?;
            states[slot].push(canvases);
        }
        let grid = trajectories[0].tag.grid;
        if trajectories.iter().any(|t| t.tag.grid != grid) {
            return Err(LgsError::InvalidSpec("codec data mixes grid sizes".into()));
        }
        Ok(Self {
            labels,
            states,
            grid,
            shift_augment: false,
        })
    }

    pub fn with_shift_augment(mut self, on: bool) -> Self {
        self.shift_augment = on;
        self
    }

    /// System uniformly, then trajectory, then step.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sys = &self.states[rng.random_range(0..self.states.len())];
        let traj = &sys[rng.random_range(0..sys.len())];
        let x = &traj[rng.random_range(0..traj.len())];
        if !self.shift_augment {
            return x.clone();
        }
        let g = self.grid;
        let (sx, sy) = (rng.random_range(0..g), rng.random_range(0..g));
        let mut out = vec![0.0; x.len()];
        for (c, plane) in x.chunks_exact(g * g).enumerate() {
            for y in 0..g {
                for xi in 0..g {
                    out[c * g * g + ((y + sy) % g) * g + (xi + sx) % g] = plane[y * g + xi];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecTrainConfig {
    pub beta: f64,
    pub batch: usize,
    pub seed: u64,
    pub opt: OptimizerConfig,
}

/// Optimizes `store` up to `cfg.opt.total_steps`. Loss components per step
/// are `[total, recon_mse, kl]`. On failure the store keeps the parameters
/// of the last completed step.
pub fn train_codec<H>(
    codec: &Codec,
    data: &CodecData,
    cfg: &CodecTrainConfig,
    store: &mut ParamStore,
    hook: H,
) -> Result<()>
where
    H: FnMut(&StepLog, &ParamStore) -> Result<()>,
{
    if store.len() != codec.n_params() {
        return Err(LgsError::Shape(format!(
            "store holds {} parameters, codec has {}",
            store.len(),
            codec.n_params()
        )));
    }
    let d = codec.cfg.d_latent;
    let batch = |step: u64, params: &[f64]| {
        let sample = |b: usize, p: &[f64], g: &mut [f64]| {
            let mut r = rng::stream(cfg.seed, &[0xc0de, step, b as u64]);
            let x = data.sample(&mut r);
            let noise = rng::standard_normal_vec(&mut r, d);
            let l = codec_loss(codec, p, &x, cfg.beta, &noise, Some(g))?;
            Ok(vec![l.total, l.recon_mse, l.kl])
        };
        batch_gradients(cfg.batch, params, &sample)
    };
    train_loop(store, &cfg.opt, batch, hook)
}

/// Mean per-state L2RE of noise-free reconstructions in raw physical units.
pub fn reconstruction_l2re(
    codec: &Codec,
    params: &[f64],
    norm: &NormStats,
    trajectories: &[Trajectory],
) -> Result<f64> {
    use rayon::prelude::*;
    let errs: Vec<Result<Vec<f64>>> = trajectories
        .par_iter()
        .map(|t| {
            t.states
                .iter()
                .map(|s| {
                    let canvas = to_canvas(t.tag, &norm.normalize(t.tag, s))?;
                    let out = codec.run(params, &canvas)?;
                    let native = from_canvas(t.tag, &out.reconstruction)?;
                    l2re(&norm.denormalize(t.tag, &native), s)
                })
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in errs {
        for v in e? {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(LgsError::InsufficientData("no states to reconstruct".into()));
    }
    Ok(sum / n as f64)
}
