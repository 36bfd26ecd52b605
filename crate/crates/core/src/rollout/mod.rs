//! Inference: probability-flow ODE integration per physical step,
//! autoregressive rollouts, ensembles and the deterministic stepper.

use rayon::prelude::*;

use crate::error::{first_non_finite, LgsError, Result};
use crate::flow::{induced_velocity, soften_source, Conditioning, FlowModel, PhysicsContext};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub k_infer: f64,
    pub ode_steps: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub seed: u64,
    pub ensemble_size: usize,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k_infer) {
            return Err(LgsError::Config(format!("k_infer {} outside [0, 1]", self.k_infer)));
        }
        if self.ode_steps == 0 {
            return Err(LgsError::Config("ode_steps must be at least 1".into()));
        }
        if !(self.epsilon >= 1e-6 && self.epsilon < 1.0) {
            return Err(LgsError::Config(format!("epsilon {} outside [1e-6, 1)", self.epsilon)));
        }
        if self.ensemble_size == 0 {
            return Err(LgsError::Config("ensemble_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfodeResult {
    /// Endpoint prediction read at `t = 1 - epsilon`; this is the next state.
    pub endpoint: Vec<f64>,
    /// Euler-integrated state at `t = 1 - epsilon`.
    pub integrated: Vec<f64>,
}

/// Explicit Euler with `ode_steps` uniform steps on `[0, 1 - epsilon]` of
/// `dx/dt = (g(x, t) - x) / max(1 - t, tau)`, then one more endpoint read.
pub fn integrate_pfode<F>(
    mut predict: F,
    x0_soft: &[f64],
    tau: f64,
    epsilon: f64,
    ode_steps: usize,
) -> Result<PfodeResult>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if ode_steps == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LgsError::Precondition(format!(
            "need ode_steps >= 1 and epsilon in (0, 1), got {ode_steps} and {epsilon}"
        )));
    }
    let h = (1.0 - epsilon) / ode_steps as f64;
    let mut x = x0_soft.to_vec();
    for i in 0..ode_steps {
        let t = i as f64 * h;
        let x_hat = predict(&x, t)?;
        let v = induced_velocity(&x_hat, &x, t, tau)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += h * vi;
        }
        if first_non_finite(&x).is_some() {
            return Err(LgsError::FatalNumeric {
                what: "ODE state".into(),
                index: i,
            });
        }
    }
    let endpoint = predict(&x, 1.0 - epsilon)?;
    if first_non_finite(&endpoint).is_some() {
        return Err(LgsError::FatalNumeric {
            what: "ODE endpoint".into(),
            index: ode_steps,
        });
    }
    Ok(PfodeResult {
        endpoint,
        integrated: x,
    })
}

/// PF-ODE step of a flow model under fixed conditioning.
pub fn pfode_step(
    model: &FlowModel,
    params: &[f64],
    context: &PhysicsContext,
    x0_soft: &[f64],
    cfg: &RolloutConfig,
) -> Result<PfodeResult> {
    integrate_pfode(
        |x, t| model.predict_endpoint(params, x, t, context),
        x0_soft,
        model.cfg.tau,
        cfg.epsilon,
        cfg.ode_steps,
    )
}

/// One regression step: a single forward pass at `t = 0`, no noise.
pub fn deterministic_step(model: &FlowModel, params: &[f64], cond: &Conditioning, x: &[f64]) -> Result<Vec<f64>> {
    model.predict_endpoint(params, x, 0.0, &cond.context)
}

/// Next state from `x` for the model's mode. `noise_key` selects the
/// noise stream of this step.
fn transition(
    model: &FlowModel,
    params: &[f64],
    cond: &Conditioning,
    x: &[f64],
    cfg: &RolloutConfig,
    noise_key: &[u64],
) -> Result<Vec<f64>> {
    if model.cfg.mode.regression() {
        return deterministic_step(model, params, cond, x);
    }
    let k = if model.cfg.mode.knob_muted() { 0.0 } else { cfg.k_infer };
    let soft = if k == 0.0 {
        x.to_vec()
    } else {
        let z = rng::standard_normal_vec(&mut rng::stream(cfg.seed, noise_key), x.len());
        soften_source(x, k, &z)?
    };
    Ok(pfode_step(model, params, &cond.context, &soft, cfg)?.endpoint)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    /// Initial history followed by `horizon` predictions.
    pub latents: Vec<Vec<f64>>,
    /// Context when the first forecast step is taken and after every step.
    pub contexts: Vec<PhysicsContext>,
}

/// Roll out `cfg.horizon` steps after `initial_history` (length
/// `context_length`). The history is first replayed: each of its states is
/// stepped once and the prediction fed to the context, so forecasting
/// starts from a context built from the model's own outputs. `stream`
/// identifies this rollout's noise.
pub fn rollout_autoregressive(
    model: &FlowModel,
    params: &[f64],
    initial_history: &[Vec<f64>],
    cfg: &RolloutConfig,
    stream: &[u64],
) -> Result<RolloutOutput> {
    cfg.validate()?;
    let l = model.cfg.context_length;
    if initial_history.len() != l {
        return Err(LgsError::Precondition(format!(
            "initial history holds {} latents, context length is {l}",
            initial_history.len()
        )));
    }
    let mut latents = initial_history.to_vec();
    if cfg.horizon == 0 {
        return Ok(RolloutOutput {
            latents,
            contexts: Vec::new(),
        });
    }
    let key = |step: usize| {
        let mut k = stream.to_vec();
        k.push(step as u64);
        k
    };
    let mut cond = model.initial_conditioning(params);
    for (s, x) in initial_history[..l - 1].iter().enumerate() {
        let x_hat = transition(model, params, &cond, x, cfg, &key(s))?;
        model.advance(params, &mut cond, &x_hat)?;
    }
    let mut contexts = vec![cond.context.clone()];
    let mut x = initial_history[l - 1].clone();
    for h in 0..cfg.horizon {
        let x_hat = transition(model, params, &cond, &x, cfg, &key(l - 1 + h))?;
        model.advance(params, &mut cond, &x_hat)?;
        contexts.push(cond.context.clone());
        latents.push(x_hat.clone());
        x = x_hat;
    }
    Ok(RolloutOutput { latents, contexts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<RolloutOutput>,
    /// Member mean of every predicted step.
    pub mean: Vec<Vec<f64>>,
    /// Member standard deviation fields (`n - 1` normalization).
    pub std: Option<Vec<Vec<f64>>>,
    /// Per-step spread: the mean over dimensions of `std`.
    pub spread: Option<Vec<f64>>,
}

/// `ensemble_size` rollouts; member `m` uses noise stream `stream ++ [m]`.
pub fn rollout_ensemble(
    model: &FlowModel,
    params: &[f64],
    initial_history: &[Vec<f64>],
    cfg: &RolloutConfig,
    stream: &[u64],
) -> Result<Ensemble> {
    cfg.validate()?;
    let members: Vec<RolloutOutput> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|m| {
            let mut key = stream.to_vec();
            key.push(m as u64);
            rollout_autoregressive(model, params, initial_history, cfg, &key)
        })
        .collect::<Result<_>>()?;
    let l = initial_history.len();
    let n = members.len() as f64;
    let d = model.cfg.d_latent;
    let mut mean = Vec::with_capacity(cfg.horizon);
    let mut std = Vec::with_capacity(cfg.horizon);
    for h in 0..cfg.horizon {
        let mut mu = vec![0.0; d];
        for m in &members {
            for (a, b) in mu.iter_mut().zip(&m.latents[l + h]) {
                *a += b / n;
            }
        }
        if members.len() > 1 {
            // shifted by the first member so identical members give exactly zero
            let base = &members[0].latents[l + h];
            let mut s1 = vec![0.0; d];
            let mut s2 = vec![0.0; d];
            for m in &members {
                for (i, (x, b)) in m.latents[l + h].iter().zip(base).enumerate() {
                    s1[i] += x - b;
                    s2[i] += (x - b) * (x - b);
                }
            }
            std.push(
                s1.iter()
                    .zip(&s2)
                    .map(|(a, q)| ((q - a * a / n).max(0.0) / (n - 1.0)).sqrt())
                    .collect::<Vec<f64>>(),
            );
        }
        mean.push(mu);
    }
    let (std, spread) = if members.len() > 1 {
        let spread = std.iter().map(|s| s.iter().sum::<f64>() / d as f64).collect();
        (Some(std), Some(spread))
    } else {
        (None, None)
    };
    Ok(Ensemble {
        members,
        mean,
        std,
        spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{AblationMode, FlowConfig};

    fn cfg(k: f64, members: usize) -> RolloutConfig {
        RolloutConfig {
            k_infer: k,
            ode_steps: 5,
            epsilon: 0.05,
            horizon: 3,
            seed: 11,
            ensemble_size: members,
        }
    }

    fn model(mode: AblationMode) -> FlowModel {
        FlowModel::new(FlowConfig {
            d_latent: 8,
            d_ctx: 8,
            n_ctx: 2,
            patch: 4,
            pyramid_factor: 2,
            hidden: 16,
            context_length: 4,
            tau: 0.05,
            mode,
        })
        .unwrap()
    }

    fn history() -> Vec<Vec<f64>> {
        let mut r = rng::stream(5, &[]);
        (0..4).map(|_| rng::standard_normal_vec(&mut r, 8)).collect()
    }

    #[test]
    fn constant_predictor_returns_its_value() {
        for n in [1, 3, 10] {
            let r = integrate_pfode(|_, _| Ok(vec![3.0]), &[-2.0], 0.05, 0.05, n).unwrap();
            assert_eq!(r.endpoint, vec![3.0]);
            // closed form (1 - t) x0 + t * 3 at t = 1 - eps
            assert!((r.integrated[0] - (0.05 * -2.0 + 0.95 * 3.0)).abs() < 1e-12);
        }
        assert!(integrate_pfode(|_, _| Ok(vec![0.0]), &[0.0], 0.05, 0.05, 0).is_err());
    }

    #[test]
    fn non_finite_state_reports_substep() {
        let r = integrate_pfode(|_, t| Ok(vec![if t > 0.3 { f64::NAN } else { 1.0 }]), &[0.0], 0.05, 0.05, 4);
        match r {
            Err(LgsError::FatalNumeric { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horizon_zero_and_seed_reproducibility() {
        let m = model(AblationMode::Full);
        let p = m.init_params(1);
        let h = history();
        let c0 = RolloutConfig { horizon: 0, ..cfg(0.2, 1) };
        assert_eq!(rollout_autoregressive(&m, &p, &h, &c0, &[0]).unwrap().latents, h);
        let a = rollout_autoregressive(&m, &p, &h, &cfg(0.2, 1), &[0]).unwrap();
        let b = rollout_autoregressive(&m, &p, &h, &cfg(0.2, 1), &[0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.latents.len(), 7);
        assert!(rollout_autoregressive(&m, &p, &h[1..], &cfg(0.2, 1), &[0]).is_err());
    }

    #[test]
    fn knob_off_first_step_is_the_plain_ode() {
        let m = model(AblationMode::Full);
        let p = m.init_params(2);
        let h = history();
        let c = cfg(0.0, 1);
        let out = rollout_autoregressive(&m, &p, &h, &c, &[0]).unwrap();
        let direct = pfode_step(&m, &p, &out.contexts[0], &h[3], &c).unwrap();
        assert_eq!(out.latents[4], direct.endpoint);
    }

    #[test]
    fn ensemble_spread_behaviour() {
        let m = model(AblationMode::Full);
        let p = m.init_params(3);
        let h = history();
        let e0 = rollout_ensemble(&m, &p, &h, &cfg(0.0, 4), &[1]).unwrap();
        assert!(e0.spread.unwrap().iter().all(|s| *s == 0.0));
        assert!(e0.members.windows(2).all(|w| w[0] == w[1]));
        assert!(rollout_ensemble(&m, &p, &h, &cfg(0.3, 1), &[1]).unwrap().spread.is_none());
        let spread = |k| rollout_ensemble(&m, &p, &h, &cfg(k, 16), &[1]).unwrap().spread.unwrap()[0];
        let (a, b, c) = (spread(0.1), spread(0.2), spread(0.4));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn regression_mode_is_deterministic() {
        let m = model(AblationMode::A4Regression);
        let p = m.init_params(4);
        let h = history();
        let e = rollout_ensemble(&m, &p, &h, &cfg(0.4, 3), &[2]).unwrap();
        assert!(e.spread.unwrap().iter().all(|s| *s == 0.0));
        let zero = vec![0.0; m.n_params()];
        let cond = m.initial_conditioning(&zero);
        assert!(deterministic_step(&m, &zero, &cond, &h[0]).unwrap().iter().all(|v| *v == 0.0));
        let cond = m.initial_conditioning(&p);
        assert_eq!(
            deterministic_step(&m, &p, &cond, &h[0]).unwrap(),
            deterministic_step(&m, &p, &cond, &h[0]).unwrap()
        );
    }
}
