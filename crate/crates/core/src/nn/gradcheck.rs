//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Parameters sampled when `indices` is not given (all if fewer exist).
    pub n_samples: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
    pub indices: Option<Vec<usize>>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            h: 1e-4,
            tolerance: 1e-4,
            floor: 1e-7,
            seed: 0,
            indices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_checked: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// `f(params, grads)` returns the loss and, when given a buffer, adds the
/// analytic gradient into it.
pub fn grad_check<F>(f: &F, params: &[f64], cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&[f64], Option<&mut [f64]>) -> f64,
{
    let mut grads = vec![0.0; params.len()];
    f(params, Some(&mut grads));
    let indices = cfg.indices.clone().unwrap_or_else(|| {
        if params.len() <= cfg.n_samples {
            (0..params.len()).collect()
        } else {
            let mut r = rng::stream(cfg.seed, &[0x6c]);
            let mut v = sample(&mut r, params.len(), cfg.n_samples).into_vec();
            v.sort_unstable();
            v
        }
    });
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        n_checked: indices.len(),
        worst_index: indices.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    for &i in &indices {
        let orig = p[i];
        p[i] = orig + cfg.h;
        let fp = f(&p, None);
        p[i] = orig - cfg.h;
        let fm = f(&p, None);
        p[i] = orig;
        let numeric = (fp - fm) / (2.0 * cfg.h);
        let a = grads[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if !(rel <= report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_err <= cfg.tolerance;
    report
}
