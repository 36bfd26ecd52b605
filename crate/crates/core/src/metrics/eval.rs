//! Horizon evaluation against raw solver states and context export.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::l2re;
use crate::codec::{Codec, LatentCache};
use crate::error::{LgsError, Result};
use crate::flow::FlowModel;
use crate::pde::{from_canvas, NormStats, Trajectory};
use crate::rollout::{rollout_autoregressive, rollout_ensemble, RolloutConfig};

/// A forecasting window over one test trajectory.
#[derive(Debug, Clone, Copy)]
pub struct EvalWindow<'a> {
    pub id: usize,
    pub trajectory: usize,
    pub start: usize,
    /// `context_length` encoded truth latents.
    pub history: &'a [Vec<f64>],
    /// Encoded truth latents of the steps being forecast.
    pub future: &'a [Vec<f64>],
}

/// Anything that produces latent forecasts from a window.
pub trait Forecaster: Sync {
    fn context_length(&self) -> usize;

    /// One latent trajectory per ensemble member, each of `horizon` steps.
    fn forecast(&self, window: &EvalWindow, horizon: usize) -> Result<Vec<Vec<Vec<f64>>>>;
}

pub struct FlowForecaster<'a> {
    pub model: &'a FlowModel,
    pub params: &'a [f64],
    pub cfg: RolloutConfig,
}

impl Forecaster for FlowForecaster<'_> {
    fn context_length(&self) -> usize {
        self.model.cfg.context_length
    }

    fn forecast(&self, window: &EvalWindow, horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let cfg = RolloutConfig { horizon, ..self.cfg };
        let l = window.history.len();
        let e = rollout_ensemble(self.model, self.params, window.history, &cfg, &[window.id as u64])?;
        Ok(e.members.into_iter().map(|m| m.latents[l..].to_vec()).collect())
    }
}

/// Returns the encoded truth; its decoded error is the codec floor.
pub struct TruthOracle {
    pub context_length: usize,
}

impl Forecaster for TruthOracle {
    fn context_length(&self) -> usize {
        self.context_length
    }

    fn forecast(&self, window: &EvalWindow, horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(vec![window.future[..horizon].to_vec()])
    }
}

/// Test split with its encoded latents and the frozen codec.
pub struct EvalData<'a> {
    pub trajectories: &'a [Trajectory],
    pub latents: &'a LatentCache,
    pub norm: &'a NormStats,
    pub codec: &'a Codec,
    pub codec_params: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub horizon: usize,
    pub mean_l2re: f64,
    pub mean_latent_l2re: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemCurve {
    pub system: String,
    /// Mean decoded L2RE at steps `1..=max_horizon`.
    pub decoded: Vec<f64>,
    pub latent: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(horizon, unweighted mean over systems)`.
    pub overall: Vec<(usize, f64)>,
    pub curves: Vec<SystemCurve>,
}

/// `(trajectory, decoded per step, latent per step)` for one window.
type JobErrors = (usize, Vec<f64>, Vec<f64>);

/// Window start positions of a trajectory with `states` states.
pub fn window_starts(states: usize, context_length: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let need = context_length + horizon;
    if states < need {
        return Vec::new();
    }
    (0..=states - need).step_by(stride.max(1)).collect()
}

pub fn eval_horizons<F: Forecaster>(
    forecaster: &F,
    data: &EvalData,
    horizons: &[usize],
    stride: usize,
) -> Result<EvalReport> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) || horizons[0] == 0 {
        return Err(LgsError::Precondition(format!(
            "horizons must be positive and strictly ascending, got {horizons:?}"
        )));
    }
    if data.trajectories.len() != data.latents.trajectories.len() {
        return Err(LgsError::Shape("test trajectories and latent cache differ in count".into()));
    }
    let l = forecaster.context_length();
    let max_h = *horizons.last().unwrap();
    let mut jobs = Vec::new();
    for (ti, lat) in data.latents.trajectories.iter().enumerate() {
        for start in window_starts(lat.len(), l, max_h, stride) {
            jobs.push((ti, start));
        }
    }
    if jobs.is_empty() {
        return Err(LgsError::InsufficientData(format!(
            "no test window covers {l} history states plus {max_h} forecast steps"
        )));
    }
    // per job: decoded and latent L2RE per step, averaged over members
    let results: Vec<Result<JobErrors>> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(ti, start))| {
            let lat = &data.latents.trajectories[ti];
            let traj = &data.trajectories[ti];
            let window = EvalWindow {
                id,
                trajectory: ti,
                start,
                history: &lat[start..start + l],
                future: &lat[start + l..start + l + max_h],
            };
            let members = forecaster.forecast(&window, max_h)?;
            let mut dec = vec![0.0; max_h];
            let mut latn = vec![0.0; max_h];
            let inv = 1.0 / members.len() as f64;
            for m in &members {
                for h in 0..max_h {
                    let truth_idx = start + l + h;
                    let canvas = data.codec.decode(data.codec_params, &m[h])?;
                    let native = from_canvas(traj.tag, &canvas)?;
                    let raw = data.norm.denormalize(traj.tag, &native);
                    dec[h] += inv * l2re(&raw, &traj.states[truth_idx])?;
                    latn[h] += inv * l2re(&m[h], &lat[truth_idx])?;
                }
            }
            Ok((ti, dec, latn))
        })
        .collect();

    let mut labels: Vec<String> = Vec::new();
    let mut sums: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
    for r in results {
        let (ti, dec, latn) = r?;
        let label = data.trajectories[ti].tag.label();
        let slot = match labels.iter().position(|x| *x == label) {
            Some(i) => i,
            None => {
                labels.push(label);
                sums.push((vec![0.0; max_h], vec![0.0; max_h], 0));
                labels.len() - 1
            }
        };
        let s = &mut sums[slot];
        for h in 0..max_h {
            s.0[h] += dec[h];
            s.1[h] += latn[h];
        }
        s.2 += 1;
    }
    let curves: Vec<SystemCurve> = labels
        .into_iter()
        .zip(sums)
        .map(|(system, (d, lt, n))| SystemCurve {
            system,
            decoded: d.iter().map(|v| v / n as f64).collect(),
            latent: lt.iter().map(|v| v / n as f64).collect(),
            n_samples: n,
        })
        .collect();
    let mut rows = Vec::new();
    for c in &curves {
        for &h in horizons {
            rows.push(EvalRow {
                system: c.system.clone(),
                horizon: h,
                mean_l2re: c.decoded[h - 1],
                mean_latent_l2re: c.latent[h - 1],
                n_samples: c.n_samples,
            });
        }
    }
    let overall = horizons
        .iter()
        .map(|&h| {
            let m = curves.iter().map(|c| c.decoded[h - 1]).sum::<f64>() / curves.len() as f64;
            (h, m)
        })
        .collect();
    Ok(EvalReport {
        rows,
        overall,
        curves,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("system,horizon,mean_l2re,mean_latent_l2re,n_samples\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{}",
                r.system, r.horizon, r.mean_l2re, r.mean_latent_l2re, r.n_samples
            );
        }
        for (h, m) in &self.overall {
            let _ = writeln!(s, "average,{h},{m:?},,");
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("system,step,mean_l2re,mean_latent_l2re,n_samples\n");
        for c in &self.curves {
            for (i, (d, l)) in c.decoded.iter().zip(&c.latent).enumerate() {
                let _ = writeln!(s, "{},{},{d:?},{l:?},{}", c.system, i + 1, c.n_samples);
            }
        }
        s
    }

    /// Aligned table in percent.
    pub fn to_table(&self) -> String {
        let horizons: Vec<usize> = self.overall.iter().map(|(h, _)| *h).collect();
        let width = self
            .curves
            .iter()
            .map(|c| c.system.len())
            .chain(["average".len()])
            .max()
            .unwrap_or(7);
        let mut s = String::from("L2RE (%) per system and horizon; average is an unweighted mean over systems\n");
        let _ = write!(s, "{:<width$}", "system");
        for h in &horizons {
            let _ = write!(s, " {:>9}", format!("h={h}"));
        }
        let _ = writeln!(s, " {:>9}", "n");
        for c in &self.curves {
            let _ = write!(s, "{:<width$}", c.system);
            for h in &horizons {
                let _ = write!(s, " {:>9.3}", 100.0 * c.decoded[h - 1]);
            }
            let _ = writeln!(s, " {:>9}", c.n_samples);
        }
        let _ = write!(s, "{:<width$}", "average");
        for (_, m) in &self.overall {
            let _ = write!(s, " {:>9.3}", 100.0 * m);
        }
        s.push('\n');
        s
    }
}

/// Context tokens at the start and the end of every test window's rollout
/// as CSV rows `system,step,values...`.
pub fn export_contexts(
    model: &FlowModel,
    params: &[f64],
    trajectories: &[Trajectory],
    latents: &LatentCache,
    cfg: &RolloutConfig,
    stride: usize,
) -> Result<String> {
    if !model.cfg.mode.persistent_context() {
        return Err(LgsError::NoContextAvailable(model.cfg.mode.name().into()));
    }
    let l = model.cfg.context_length;
    let mut jobs = Vec::new();
    for (ti, lat) in latents.trajectories.iter().enumerate() {
        for start in window_starts(lat.len(), l, cfg.horizon, stride) {
            jobs.push((ti, start));
        }
    }
    let rows: Vec<Result<String>> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(ti, start))| {
            let out = rollout_autoregressive(
                model,
                params,
                &latents.trajectories[ti][start..start + l],
                &RolloutConfig {
                    ensemble_size: 1,
                    ..*cfg
                },
                &[id as u64, 0],
            )?;
            let label = trajectories[ti].tag.label();
            let mut s = String::new();
            for c in [out.contexts.first(), out.contexts.last()].into_iter().flatten() {
                let _ = write!(s, "{label},{}", c.step_index);
                for v in c.tokens.iter().flatten() {
                    let _ = write!(s, ",{v:?}");
                }
                s.push('\n');
            }
            Ok(s)
        })
        .collect();
    let d = model.cfg.n_ctx * model.cfg.d_ctx;
    let mut csv = String::from("system,step");
    for i in 0..d {
        let _ = write!(csv, ",c{i}");
    }
    csv.push('\n');
    for r in rows {
        csv.push_str(&r?);
    }
    Ok(csv)
}
