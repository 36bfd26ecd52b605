//! Numerical checks of the rollout error theory: geometric compounding of
//! a deterministic surrogate, the contraction of carried-over error under
//! softening, and the empirical growth curves of trained models.

use rayon::prelude::*;

use crate::codec::LatentCache;
use crate::error::{LgsError, Result};
use crate::flow::{soften_source, FlowModel};
use crate::metrics::window_starts;
use crate::rng;
use crate::rollout::{pfode_step, rollout_autoregressive, rollout_ensemble, RolloutConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub n_windows: usize,
}

/// Rollout error `||delta_s||` per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
    /// Human-readable settings that produced the curve.
    pub config: String,
    /// Set when iteration stopped early on overflow.
    pub truncated: bool,
}

impl GrowthCurve {
    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_error).collect()
    }

    fn csv_rows(&self, out: &mut String) {
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.label, p.step, p.mean_error, p.std_error, p.n_windows
            ));
        }
    }
}

pub const CURVE_CSV_HEADER: &str = "label,step,mean_error,std_error,n_windows\n";

/// CSV of several curves under one header.
pub fn curves_csv(curves: &[&GrowthCurve]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    for c in curves {
        c.csv_rows(&mut s);
    }
    s
}

/// `bound[n - 1] = sum_{j < n} L^(n-1-j) e_j` for `n = 1..=errors.len()`.
pub fn det_compounding_bound(lipschitz: f64, one_step_errors: &[f64]) -> Result<Vec<f64>> {
    if !(lipschitz > 0.0) {
        return Err(LgsError::Precondition(format!("Lipschitz constant {lipschitz} must be positive")));
    }
    Ok((1..=one_step_errors.len())
        .map(|n| {
            one_step_errors[..n]
                .iter()
                .enumerate()
                .map(|(j, e)| lipschitz.powi((n - 1 - j) as i32) * e.abs())
                .sum()
        })
        .collect())
}

/// Iterates the truth map `x -> L x` next to the surrogate `x -> L x + bias`
/// from a shared random start and records `|x_n - x*_n|`. The curve is
/// checked against [`det_compounding_bound`] with `e_j = |bias|`.
pub fn simulate_det_rollout(lipschitz: f64, model_bias: f64, horizon: usize, seed: u64) -> Result<GrowthCurve> {
    if horizon == 0 {
        return Err(LgsError::Precondition("horizon must be at least 1".into()));
    }
    let bound = det_compounding_bound(lipschitz, &vec![model_bias; horizon])?;
    let start = rng::standard_normal_vec(&mut rng::stream(seed, &[0xb0d]), 1)[0];
    let (mut truth, mut model) = (start, start);
    let mut points = Vec::with_capacity(horizon);
    let mut truncated = false;
    for (n, &b) in bound.iter().enumerate() {
        truth *= lipschitz;
        model = lipschitz * model + model_bias;
        // measured from the two separate iterates, not from the recursion
        let delta = (model - truth).abs();
        if !delta.is_finite() || !b.is_finite() {
            truncated = true;
            break;
        }
        // slack for the rounding of the two iterates
        let slack = 1e-12 * (1.0 + truth.abs() + b);
        if delta > b + slack {
            return Err(LgsError::BoundViolated {
                step: n + 1,
                empirical: delta,
                bound: b,
            });
        }
        points.push(CurvePoint {
            step: n + 1,
            mean_error: delta,
            std_error: 0.0,
            n_windows: 1,
        });
    }
    Ok(GrowthCurve {
        label: "deterministic-affine".into(),
        points,
        config: format!("L={lipschitz} bias={model_bias} horizon={horizon} seed={seed}"),
        truncated,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `| ||soft(x* + delta) - soft(x*)|| - (1 - k) ||delta|| |` with both
/// states softened by the same `z`, around the base point `x_star`.
pub fn soft_contraction_residual(x_star: &[f64], delta: &[f64], k: f64, z: &[f64]) -> Result<f64> {
    if x_star.len() != delta.len() || z.len() != delta.len() {
        return Err(LgsError::Shape(format!(
            "x*, delta and z must share a length, got {}, {} and {}",
            x_star.len(),
            delta.len(),
            z.len()
        )));
    }
    let x: Vec<f64> = x_star.iter().zip(delta).map(|(a, d)| a + d).collect();
    let soft = soften_source(&x, k, z)?;
    let soft_star = soften_source(x_star, k, z)?;
    Ok((gap(&soft, &soft_star) - (1.0 - k) * norm(delta)).abs())
}

/// Contraction residual with the truth state taken to be the noise draw
/// itself, so no extra input is needed.
pub fn verify_soft_contraction(delta: &[f64], k: f64, z: &[f64]) -> Result<f64> {
    soft_contraction_residual(z, delta, k, z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionSummary {
    pub trials: usize,
    pub max_residual: f64,
    /// Trial index of the largest residual.
    pub worst_trial: usize,
}

/// [`verify_soft_contraction`] over `trials` random draws: dimension in
/// `1..=64`, `delta` with a log-uniform scale in `[1e-2, 1e2]`, `k ~ U[0, 1]`.
pub fn contraction_sweep(trials: usize, seed: u64) -> Result<ContractionSummary> {
    use rand::Rng;
    let mut worst = (0.0, 0);
    for i in 0..trials {
        let mut r = rng::stream(seed, &[0xc7c, i as u64]);
        let d = r.random_range(1..=64usize);
        let scale = 10f64.powf(r.random_range(-2.0..=2.0));
        let delta: Vec<f64> = rng::standard_normal_vec(&mut r, d).iter().map(|v| v * scale).collect();
        let k = r.random_range(0.0..=1.0);
        let z = rng::standard_normal_vec(&mut r, d);
        let res = verify_soft_contraction(&delta, k, &z)?;
        if res > worst.0 {
            worst = (res, i);
        }
    }
    Ok(ContractionSummary {
        trials,
        max_residual: worst.0,
        worst_trial: worst.1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    pub rollout: RolloutConfig,
    pub stride: usize,
    /// Relative size of the perturbations used to estimate the Lipschitz
    /// constant of the noise-free transition.
    pub probe_scale: f64,
}

/// Least-squares fit of `delta_{s+1} = a delta_s + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionFit {
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub n_pairs: usize,
}

pub fn fit_linear_recursion(pairs: &[(f64, f64)]) -> Result<RecursionFit> {
    let n = pairs.len();
    if n < 3 {
        return Err(LgsError::InsufficientData(format!("{n} pairs, need at least 3 for a fit")));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(LgsError::InsufficientData("no spread in delta_s".into()));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = pairs.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
    let s2 = rss / (nf - 2.0);
    Ok(RecursionFit {
        a,
        b,
        se_a: (s2 / sxx).sqrt(),
        se_b: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        n_pairs: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub flow: GrowthCurve,
    pub det: GrowthCurve,
    pub fit: RecursionFit,
    pub one_minus_k: f64,
    /// Mean amplification of small input perturbations by the noise-free
    /// flow transition.
    pub lipschitz: f64,
}

impl GrowthReport {
    pub fn to_csv(&self) -> String {
        curves_csv(&[&self.flow, &self.det])
    }

    pub fn summary(&self) -> String {
        let f = &self.fit;
        format!(
            "fitted recursion delta[s+1] = a*delta[s] + b over {} pairs\n\
             a = {:.6} (se {:.6})\n\
             b = {:.6e} (se {:.6e})\n\
             1 - k_infer = {:.6}\n\
             estimated transition Lipschitz L_T = {:.6}\n\
             (1 - k_infer) * L_T = {:.6}\n\
             flow delta: {}\n\
             deterministic delta: {}\n",
            f.n_pairs,
            f.a,
            f.se_a,
            f.b,
            f.se_b,
            self.one_minus_k,
            self.lipschitz,
            self.one_minus_k * self.lipschitz,
            fmt_curve(&self.flow),
            fmt_curve(&self.det),
        )
    }
}

fn fmt_curve(c: &GrowthCurve) -> String {
    c.points
        .iter()
        .map(|p| format!("{:.4e}", p.mean_error))
        .collect::<Vec<_>>()
        .join(" ")
}

fn summarize(label: &str, config: String, per_window: &[Vec<f64>]) -> GrowthCurve {
    let horizon = per_window[0].len();
    let n = per_window.len() as f64;
    let points = (0..horizon)
        .map(|s| {
            let mean = per_window.iter().map(|w| w[s]).sum::<f64>() / n;
            let var = per_window.iter().map(|w| (w[s] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            CurvePoint {
                step: s + 1,
                mean_error: mean,
                std_error: var.sqrt(),
                n_windows: per_window.len(),
            }
        })
        .collect();
    GrowthCurve {
        label: label.into(),
        points,
        config,
        truncated: false,
    }
}

/// Rolls the flow model and the deterministic baseline over every test
/// window and measures `||x_hat_s - x_s||` against the encoded truth.
/// Flow errors are averaged over ensemble members first.
pub fn growth_curve_experiment(
    flow: (&FlowModel, &[f64]),
    det: (&FlowModel, &[f64]),
    data: &LatentCache,
    cfg: &GrowthConfig,
) -> Result<GrowthReport> {
    cfg.rollout.validate()?;
    let (fm, fp) = flow;
    let (dm, dp) = det;
    let l = fm.cfg.context_length;
    if dm.cfg.context_length != l {
        return Err(LgsError::Precondition(format!(
            "context lengths differ: flow {l}, baseline {}",
            dm.cfg.context_length
        )));
    }
    let horizon = cfg.rollout.horizon;
    if horizon < 2 {
        return Err(LgsError::Precondition("horizon must be at least 2 to fit a recursion".into()));
    }
    let windows: Vec<(usize, usize)> = data
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, tr)| window_starts(tr.len(), l, horizon, cfg.stride).into_iter().map(move |s| (i, s)))
        .collect();
    if windows.len() < 8 {
        return Err(LgsError::InsufficientData(format!(
            "{} evaluation windows, need at least 8",
            windows.len()
        )));
    }
    type WindowErrors = (Vec<f64>, Vec<f64>, f64);
    let results: Vec<WindowErrors> = windows
        .par_iter()
        .enumerate()
        .map(|(id, &(i, s))| -> Result<WindowErrors> {
            let tr = &data.trajectories[i];
            let history = &tr[s..s + l];
            let truth = &tr[s + l..s + l + horizon];
            let ens = rollout_ensemble(fm, fp, history, &cfg.rollout, &[id as u64])?;
            let mut flow_err = vec![0.0; horizon];
            let inv = 1.0 / ens.members.len() as f64;
            for m in &ens.members {
                for (h, e) in flow_err.iter_mut().enumerate() {
                    *e += inv * gap(&m.latents[l + h], &truth[h]);
                }
            }
            let d = rollout_autoregressive(dm, dp, history, &RolloutConfig { ensemble_size: 1, ..cfg.rollout }, &[id as u64])?;
            let det_err = (0..horizon).map(|h| gap(&d.latents[l + h], &truth[h])).collect();
            let lip = transition_lipschitz(fm, fp, history, cfg, id as u64)?;
            Ok((flow_err, det_err, lip))
        })
        .collect::<Result<_>>()?;
    let flow_w: Vec<Vec<f64>> = results.iter().map(|r| r.0.clone()).collect();
    let det_w: Vec<Vec<f64>> = results.iter().map(|r| r.1.clone()).collect();
    let lipschitz = results.iter().map(|r| r.2).sum::<f64>() / results.len() as f64;
    let pairs: Vec<(f64, f64)> = flow_w
        .iter()
        .flat_map(|w| w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>())
        .collect();
    let fit = fit_linear_recursion(&pairs)?;
    let rc = &cfg.rollout;
    let config = |label: &str| {
        format!(
            "{label} k_infer={} ode_steps={} epsilon={} horizon={} ensemble={} seed={} stride={}",
            rc.k_infer, rc.ode_steps, rc.epsilon, rc.horizon, rc.ensemble_size, rc.seed, cfg.stride
        )
    };
    Ok(GrowthReport {
        flow: summarize("flow", config(fm.cfg.mode.name()), &flow_w),
        det: summarize("deterministic", config(dm.cfg.mode.name()), &det_w),
        fit,
        one_minus_k: 1.0 - if fm.cfg.mode.knob_muted() { 0.0 } else { rc.k_infer },
        lipschitz,
    })
}

/// `||T(x + u) - T(x)|| / ||u||` for one random direction `u`, where `T`
/// is the noise-free PF-ODE step at the last history state under a context
/// built from the truth history.
fn transition_lipschitz(
    model: &FlowModel,
    params: &[f64],
    history: &[Vec<f64>],
    cfg: &GrowthConfig,
    id: u64,
) -> Result<f64> {
    let mut cond = model.initial_conditioning(params);
    for x in &history[1..] {
        model.advance(params, &mut cond, x)?;
    }
    let x = &history[history.len() - 1];
    let dir = rng::standard_normal_vec(&mut rng::stream(cfg.rollout.seed, &[0x11b, id]), x.len());
    let scale = cfg.probe_scale * norm(x).max(1e-12) / norm(&dir).max(1e-300);
    let u: Vec<f64> = dir.iter().map(|d| d * scale).collect();
    let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
    let step = |v: &[f64]| -> Result<Vec<f64>> {
        if model.cfg.mode.regression() {
            model.predict_endpoint(params, v, 0.0, &cond.context)
        } else {
            Ok(pfode_step(model, params, &cond.context, v, &cfg.rollout)?.endpoint)
        }
    };
    Ok(gap(&step(&xp)?, &step(x)?) / norm(&u))
}
