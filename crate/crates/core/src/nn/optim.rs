//! Parameter storage, AdamW and the warmup-cosine learning-rate schedule.

use crate::error::{first_non_finite, LgsError, Result};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub params: Vec<f64>,
    pub grads: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl ParamStore {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            params,
            grads: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.warmup_frac > 0.0
            && self.warmup_frac < 1.0
            && self.weight_decay >= 0.0
            && self.base_lr >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LgsError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_frac * self.total_steps as f64).round() as u64
    }
}

/// Round to the nearest `f32`, the precision checkpoints are stored at.
#[inline]
pub(crate) fn canon(x: f64) -> f64 {
    x as f32 as f64
}

/// One decoupled-weight-decay Adam step. Parameters and moments are kept at
/// f32 precision so that a checkpoint round-trip resumes bit-exactly.
pub fn adamw_step(store: &mut ParamStore, cfg: &OptimizerConfig, lr: f64) -> Result<()> {
    if let Some(i) = first_non_finite(&store.grads) {
        return Err(LgsError::FatalNumeric {
            what: "gradient".into(),
            index: i,
        });
    }
    let t = store.step_count + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut params = store.params.clone();
    let mut m = store.m.clone();
    let mut v = store.v.clone();
    for i in 0..params.len() {
        let g = store.grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        params[i] -= lr * (cfg.weight_decay * params[i] + step);
        params[i] = canon(params[i]);
        m[i] = canon(m[i]);
        v[i] = canon(v[i]);
    }
    if let Some(i) = first_non_finite(&params) {
        return Err(LgsError::FatalNumeric {
            what: "parameter".into(),
            index: i,
        });
    }
    store.params = params;
    store.m = m;
    store.v = v;
    store.step_count = t;
    store.zero_grads();
    Ok(())
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn lr_schedule(step: u64, cfg: &OptimizerConfig) -> f64 {
    let warm = cfg.warmup_steps();
    let step = step.min(cfg.total_steps);
    if step < warm {
        return cfg.base_lr * step as f64 / warm as f64;
    }
    let span = cfg.total_steps.saturating_sub(warm);
    if span == 0 {
        return cfg.base_lr;
    }
    let progress = (step - warm) as f64 / span as f64;
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(beta1: f64, beta2: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            beta1,
            beta2,
            weight_decay: wd,
            base_lr: 1e-3,
            total_steps: 100,
            warmup_frac: 0.1,
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut s = ParamStore::new(vec![0.25, -1.5, 3.0]);
        adamw_step(&mut s, &cfg(0.9, 0.95, 0.0), 0.1).unwrap();
        assert_eq!(s.params, vec![0.25, -1.5, 3.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn hand_computed_single_step() {
        let mut s = ParamStore::new(vec![1.0]);
        s.grads[0] = 1.0;
        adamw_step(&mut s, &cfg(0.0, 0.0, 0.0), 0.1).unwrap();
        assert!((s.params[0] - 0.9).abs() < 1e-6);
        assert_eq!(s.grads[0], 0.0);
    }

    #[test]
    fn decoupled_decay_alone() {
        let mut s = ParamStore::new(vec![2.0]);
        adamw_step(&mut s, &cfg(0.9, 0.95, 1e-2), 0.5).unwrap();
        assert!((s.params[0] - 2.0 * (1.0 - 0.5 * 1e-2)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut s = ParamStore::new(vec![1.0, 2.0, 3.0]);
        s.grads[2] = f64::NAN;
        let before = s.clone();
        match adamw_step(&mut s, &cfg(0.9, 0.95, 0.0), 0.1) {
            Err(LgsError::FatalNumeric { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!((&s.params, &s.m, &s.v, s.step_count), (&before.params, &before.m, &before.v, 0));
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut s = ParamStore::new(vec![0.1, 0.2, -0.3]);
            for k in 0..5 {
                s.grads = vec![0.01 * k as f64, -0.5, 0.3];
                adamw_step(&mut s, &cfg(0.9, 0.95, 1e-4), 1e-2).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_landmarks() {
        let c = cfg(0.9, 0.95, 0.0);
        assert_eq!(lr_schedule(0, &c), 0.0);
        assert_eq!(lr_schedule(10, &c), 1e-3);
        assert!((lr_schedule(55, &c) - 5e-4).abs() < 1e-15);
        assert!(lr_schedule(100, &c).abs() < 1e-18);
        assert!(lr_schedule(5, &c) < lr_schedule(10, &c));
    }
}
