//! Relative-error metrics, horizon evaluation and context export.

mod eval;

pub use eval::{
    eval_horizons, export_contexts, window_starts, EvalData, EvalReport, EvalRow, EvalWindow,
    FlowForecaster, Forecaster, SystemCurve, TruthOracle,
};

use crate::error::{LgsError, Result};

/// `||pred - truth|| / ||truth||` over the flattened state.
pub fn l2re(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(LgsError::Shape(format!(
            "prediction has length {}, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let den: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(LgsError::DegenerateTruth);
    }
    let num: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}
