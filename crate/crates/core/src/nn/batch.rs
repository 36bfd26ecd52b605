//! Minibatch gradient accumulation and the generic optimizer loop.

use rayon::prelude::*;

use super::optim::{adamw_step, lr_schedule, OptimizerConfig, ParamStore};
use crate::error::{first_non_finite, LgsError, Result};

/// Fixed number of partial sums; independent of the worker count so the
/// reduction order, and hence every bit of the result, never changes.
const CHUNKS: usize = 8;

/// Per-sample callback: adds the sample's gradient into the buffer and
/// returns its loss components (first entry is the optimized total).
pub trait SampleGrad: Fn(usize, &[f64], &mut [f64]) -> Result<Vec<f64>> + Sync {}
impl<T: Fn(usize, &[f64], &mut [f64]) -> Result<Vec<f64>> + Sync> SampleGrad for T {}

/// Mean loss components and mean gradient over `n` samples.
pub fn batch_gradients<F: SampleGrad>(n: usize, params: &[f64], f: &F) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(LgsError::Precondition("empty minibatch".into()));
    }
    let chunk = n.div_ceil(CHUNKS);
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; params.len()];
            let mut losses: Vec<f64> = Vec::new();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let l = f(i, params, &mut g)?;
                if losses.is_empty() {
                    losses = l;
                } else {
                    for (a, b) in losses.iter_mut().zip(&l) {
                        *a += b;
                    }
                }
            }
            Ok((losses, g))
        })
        .collect();
    let mut losses: Vec<f64> = Vec::new();
    let mut grads = vec![0.0; params.len()];
    for p in partials {
        let (l, g) = p?;
        if losses.is_empty() {
            losses = l;
        } else {
            for (a, b) in losses.iter_mut().zip(&l) {
                *a += b;
            }
        }
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    losses.iter_mut().for_each(|v| *v *= inv);
    grads.iter_mut().for_each(|v| *v *= inv);
    Ok((losses, grads))
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub losses: Vec<f64>,
}

/// Runs optimizer steps `store.step_count .. total_steps`. `batch(step, params)`
/// returns mean losses and gradients. On error the store holds the last good
/// state. `hook` sees the store after each completed step.
pub fn train_loop<B, H>(store: &mut ParamStore, opt: &OptimizerConfig, batch: B, mut hook: H) -> Result<()>
where
    B: Fn(u64, &[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
    H: FnMut(&StepLog, &ParamStore) -> Result<()>,
{
    opt.validate()?;
    while store.step_count < opt.total_steps {
        let step = store.step_count;
        let lr = lr_schedule(step, opt);
        let (losses, grads) = batch(step, &store.params)?;
        if let Some(i) = first_non_finite(&losses) {
            return Err(LgsError::FatalNumeric {
                what: format!("loss component at step {step}"),
                index: i,
            });
        }
        store.grads = grads;
        adamw_step(store, opt, lr)?;
        hook(&StepLog { step, lr, losses }, store)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_mean_matches_serial_sum() {
        let params = vec![1.0, -2.0];
        let f = |i: usize, p: &[f64], g: &mut [f64]| {
            let x = i as f64 * 0.1;
            g[0] += 2.0 * x * p[0];
            g[1] += 1.0;
            Ok(vec![x * p[0] * p[0] + p[1], x])
        };
        let (l, g) = batch_gradients(13, &params, &f).unwrap();
        let xs: Vec<f64> = (0..13).map(|i| i as f64 * 0.1).collect();
        let mean_x = xs.iter().sum::<f64>() / 13.0;
        assert!((l[0] - (mean_x - 2.0)).abs() < 1e-12);
        assert!((g[0] - 2.0 * mean_x).abs() < 1e-12);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn loop_minimizes_a_quadratic() {
        let opt = OptimizerConfig {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.0,
            base_lr: 0.05,
            total_steps: 400,
            warmup_frac: 0.1,
        };
        let mut store = ParamStore::new(vec![2.0, -3.0]);
        let mut seen = 0;
        train_loop(
            &mut store,
            &opt,
            |_, p| Ok((vec![p[0] * p[0] + p[1] * p[1]], vec![2.0 * p[0], 2.0 * p[1]])),
            |log, _| {
                assert_eq!(log.step, seen);
                seen += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen, 400);
        assert!(store.params.iter().all(|v| v.abs() < 0.05), "{:?}", store.params);
    }
}
