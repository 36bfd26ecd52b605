//! Stage II: flow forcing over windows of cached latents.

use rand::Rng;

use super::bridge::{bridge_state, clamped_gap, fm_loss_endpoint, fm_loss_velocity, soften_source};
use super::model::{FlowModel, KnobPolicy, PhysicsContext};
use crate::codec::LatentCache;
use crate::error::{LgsError, Result};
use crate::nn::{batch_gradients, train_loop, OptimizerConfig, ParamStore, StepLog, Tape, Var};
use crate::rng;

/// One supervised transition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBatch {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub z: Vec<f64>,
    pub k: f64,
    pub t: f64,
    pub context: PhysicsContext,
}

impl FlowBatch {
    pub fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        if self.x1.len() != d || self.z.len() != d {
            return Err(LgsError::Shape("x0, x1 and z lengths differ".into()));
        }
        if !(0.0..=1.0).contains(&self.k) || !(0.0..1.0).contains(&self.t) {
            return Err(LgsError::Precondition(format!(
                "need k in [0, 1] and t in [0, 1), got k = {}, t = {}",
                self.k, self.t
            )));
        }
        Ok(())
    }

    /// Softened source and bridge point.
    pub fn bridge(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let soft = soften_source(&self.x0, self.k, &self.z)?;
        let x_t = bridge_state(&soft, &self.x1, self.t)?;
        Ok((soft, x_t))
    }
}

/// Endpoint-form loss of one batch element.
pub fn fm_loss(model: &FlowModel, params: &[f64], batch: &FlowBatch) -> Result<f64> {
    let (_, x_t) = batch.bridge()?;
    let x_hat = model.predict_endpoint(params, &x_t, batch.t, &batch.context)?;
    fm_loss_endpoint(&x_hat, &batch.x1, batch.t, model.cfg.tau)
}

/// Velocity-form loss of the same batch element, sharing the clamp.
pub fn fm_loss_velocity_form(model: &FlowModel, params: &[f64], batch: &FlowBatch) -> Result<f64> {
    let (_, x_t) = batch.bridge()?;
    let x_hat = model.predict_endpoint(params, &x_t, batch.t, &batch.context)?;
    fm_loss_velocity(&x_hat, &x_t, &batch.x1, batch.t, model.cfg.tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub loss: f64,
    pub step_losses: Vec<f64>,
    pub ks: Vec<f64>,
    pub ts: Vec<f64>,
    /// Context tokens before every step.
    pub contexts: Vec<Vec<Vec<f64>>>,
}

/// Loss over one window of `context_length + 1` latents, with the context
/// driven by the model's own predictions. Adds the gradient into `grads`.
pub fn window_loss<R: Rng + ?Sized>(
    model: &FlowModel,
    params: &[f64],
    window: &[Vec<f64>],
    knob: KnobPolicy,
    rng: &mut R,
    grads: Option<&mut [f64]>,
) -> Result<WindowReport> {
    let steps = model.cfg.context_length;
    if window.len() != steps + 1 {
        return Err(LgsError::Shape(format!(
            "window holds {} latents, expected {}",
            window.len(),
            steps + 1
        )));
    }
    let mode = model.cfg.mode;
    let d = model.cfg.d_latent;
    let tau = model.cfg.tau;
    let mut tape = Tape::new(params);
    let mut ctx = model.initial_context_tape(&mut tape);
    let mut hist: Vec<Var> = Vec::new();
    let mut terms = Vec::with_capacity(steps);
    let mut report = WindowReport {
        loss: 0.0,
        step_losses: Vec::with_capacity(steps),
        ks: Vec::new(),
        ts: Vec::new(),
        contexts: Vec::new(),
    };
    for s in 0..steps {
        report
            .contexts
            .push(ctx.iter().map(|v| tape.value(*v).to_vec()).collect());
        let x1 = tape.constant(window[s + 1].clone());
        let term = if mode.regression() {
            let x0 = tape.constant(window[s].clone());
            let x_hat = model.predict_endpoint_tape(&mut tape, x0, 0.0, &ctx);
            let r = tape.sub(x_hat, x1);
            let sq = tape.sq_norm(r);
            hist.push(x_hat);
            sq
        } else {
            let k = if mode.knob_muted() { 0.0 } else { knob.draw(rng) };
            let z = rng::standard_normal_vec(rng, d);
            let t: f64 = rng.random_range(0.0..1.0);
            let soft = soften_source(&window[s], k, &z)?;
            let x_t = bridge_state(&soft, &window[s + 1], t)?;
            let xt = tape.constant(x_t);
            let x_hat = model.predict_endpoint_tape(&mut tape, xt, t, &ctx);
            let r = tape.sub(x_hat, x1);
            let sq = tape.sq_norm(r);
            let gap = clamped_gap(t, tau);
            report.ks.push(k);
            report.ts.push(t);
            hist.push(x_hat);
            tape.scale(sq, 1.0 / (gap * gap))
        };
        report.step_losses.push(tape.scalar(term));
        terms.push(term);
        if hist.len() > model.history_cap() {
            hist.remove(0);
        }
        if s + 1 < steps {
            ctx = model.update_context_tape(&mut tape, &ctx, &hist)?;
        }
    }
    let all = tape.concat(&terms);
    let sum = tape.sum(all);
    let loss = tape.scale(sum, 1.0 / steps as f64);
    report.loss = tape.scalar(loss);
    if !report.loss.is_finite() {
        return Err(LgsError::FatalNumeric {
            what: "window loss".into(),
            index: 0,
        });
    }
    if let Some(g) = grads {
        tape.backward(loss, &[1.0], g);
    }
    Ok(report)
}

/// Every `(trajectory, start)` with a full window.
pub fn window_index(cache: &LatentCache, window: usize) -> Vec<(usize, usize)> {
    cache
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..(t.len() + 1).saturating_sub(window)).map(move |s| (i, s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTrainConfig {
    pub batch: usize,
    pub seed: u64,
    pub knob: KnobPolicy,
    pub opt: OptimizerConfig,
}

/// Optimizes `store` up to `cfg.opt.total_steps` on uniformly drawn windows.
/// On failure the store keeps the parameters of the last completed step.
pub fn train_flow_forcing<H>(
    model: &FlowModel,
    cache: &LatentCache,
    cfg: &FlowTrainConfig,
    store: &mut ParamStore,
    hook: H,
) -> Result<()>
where
    H: FnMut(&StepLog, &ParamStore) -> Result<()>,
{
    if store.len() != model.n_params() {
        return Err(LgsError::Shape(format!(
            "store holds {} parameters, flow model has {}",
            store.len(),
            model.n_params()
        )));
    }
    if cache.d_latent != model.cfg.d_latent {
        return Err(LgsError::Shape(format!(
            "latent cache width {} differs from model width {}",
            cache.d_latent, model.cfg.d_latent
        )));
    }
    let len = model.cfg.context_length + 1;
    let windows = window_index(cache, len);
    if windows.is_empty() {
        return Err(LgsError::InsufficientData(format!(
            "no trajectory has the {len} latents a training window needs"
        )));
    }
    let batch = |step: u64, params: &[f64]| {
        let sample = |b: usize, p: &[f64], g: &mut [f64]| {
            let mut r = rng::stream(cfg.seed, &[0xf10, step, b as u64]);
            let (traj, start) = windows[r.random_range(0..windows.len())];
            let w = &cache.trajectories[traj][start..start + len];
            let rep = window_loss(model, p, w, cfg.knob, &mut r, Some(g))?;
            Ok(vec![rep.loss])
        };
        batch_gradients(cfg.batch, params, &sample)
    };
    train_loop(store, &cfg.opt, batch, hook)
}
