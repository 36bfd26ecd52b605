//! Shared 2D canvas for mixed 1D/2D corpora.
//!
//! The codec sees every state as a `[CHANNELS, grid, grid]` field. A 1D state
//! `u(x)` is lifted to the y-invariant field `u(x, y) = u(x)`, and projected
//! back by averaging over `y`.

use crate::error::{LgsError, Result};
use crate::pde::system::SystemTag;
use crate::pde::CHANNELS;

pub fn to_canvas(tag: SystemTag, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != tag.state_len() {
        return Err(LgsError::Shape(format!(
            "state of {} values for {}",
            state.len(),
            tag
        )));
    }
    if tag.dims == 2 {
        return Ok(state.to_vec());
    }
    let n = tag.grid;
    let mut canvas = Vec::with_capacity(CHANNELS * n * n);
    for c in 0..CHANNELS {
        let row = &state[c * n..(c + 1) * n];
        for _ in 0..n {
            canvas.extend_from_slice(row);
        }
    }
    Ok(canvas)
}

pub fn from_canvas(tag: SystemTag, canvas: &[f64]) -> Result<Vec<f64>> {
    let n = tag.grid;
    if canvas.len() != CHANNELS * n * n {
        return Err(LgsError::Shape(format!(
            "canvas of {} values for grid {}",
            canvas.len(),
            n
        )));
    }
    if tag.dims == 2 {
        return Ok(canvas.to_vec());
    }
    let mut state = vec![0.0; CHANNELS * n];
    for c in 0..CHANNELS {
        for y in 0..n {
            let row = &canvas[(c * n + y) * n..(c * n + y + 1) * n];
            for (dst, v) in state[c * n..(c + 1) * n].iter_mut().zip(row) {
                *dst += v;
            }
        }
    }
    state.iter_mut().for_each(|v| *v /= n as f64);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::SystemKind;

    #[test]
    fn lifting_then_projecting_is_identity() {
        let tag = SystemTag {
            kind: SystemKind::Heat,
            dims: 1,
            grid: 8,
        };
        let state: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        let canvas = to_canvas(tag, &state).unwrap();
        assert_eq!(canvas.len(), 3 * 64);
        assert_eq!(canvas[8 * 3 + 2], state[2]);
        let back = from_canvas(tag, &canvas).unwrap();
        for (a, b) in state.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
