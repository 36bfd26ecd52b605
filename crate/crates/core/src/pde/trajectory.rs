use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{first_non_finite, LgsError, Result};
use crate::pde::system::{step_system, SystemKind, SystemSpec, SystemTag};

/// Spectral decay exponent of the random initial conditions.
const SPECTRAL_DECAY: f64 = 3.0;

/// One simulated trajectory, `states[s]` laid out as `[channel, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tag: SystemTag,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of physical steps `S`; there are `S + 1` states.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Band-limited random field on the periodic grid: Gaussian Fourier
/// coefficients with power-law amplitude `(1 + |k|)^-3`, cut off at
/// `grid / 4` along each axis.
fn fourier_field<R: Rng + ?Sized>(rng: &mut R, grid: usize, dims: u8) -> Vec<f64> {
    let cutoff = (grid / 4) as i64;
    let mut modes = Vec::new();
    for kx in 0..=cutoff {
        let ky_range = if dims == 1 { 0..=0 } else { -cutoff..=cutoff };
        for ky in ky_range {
            // keep one of each (k, -k) pair
            if kx == 0 && ky < 0 {
                continue;
            }
            let norm = ((kx * kx + ky * ky) as f64).sqrt();
            let amp = (1.0 + norm).powf(-SPECTRAL_DECAY);
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = if kx == 0 && ky == 0 {
                0.0
            } else {
                StandardNormal.sample(rng)
            };
            modes.push((kx as f64, ky as f64, amp * a, amp * b));
        }
    }
    let points = grid.pow(dims as u32);
    let h = 1.0 / grid as f64;
    (0..points)
        .map(|idx| {
            let x = (idx % grid) as f64 * h;
            let y = (idx / grid) as f64 * h;
            modes
                .iter()
                .map(|&(kx, ky, a, b)| {
                    let phase = TAU * (kx * x + ky * y);
                    a * phase.cos() + b * phase.sin()
                })
                .sum()
        })
        .collect()
}

/// Random smooth initial state for `spec`, padded to the common channel count.
pub fn initial_condition<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> Vec<f64> {
    let tag = spec.tag();
    let points = tag.points();
    let field = fourier_field(rng, spec.grid_size, spec.dims);
    let mut state = vec![0.0; tag.state_len()];
    match spec.kind {
        SystemKind::GrayScott => {
            // map the field to [0, 1] and seed the two species from it
            let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            for (i, f) in field.iter().enumerate() {
                let s = (f - lo) / span;
                state[i] = 1.0 - 0.5 * s;
                state[points + i] = 0.25 * s;
            }
        }
        _ => state[..points].copy_from_slice(&field),
    }
    state
}

/// Simulate `n_steps` physical steps from a seeded random initial condition.
pub fn generate_trajectory(spec: &SystemSpec, seed: u64, n_steps: usize) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(LgsError::Precondition("n_steps must be at least 1".into()));
    }
    let mut rng = crate::rng::stream(seed, &[]);
    let mut state = initial_condition(spec, &mut rng);
    if let Some(cell) = first_non_finite(&state) {
        return Err(LgsError::StabilityViolation { cell });
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    for _ in 0..n_steps {
        let next = step_system(spec, &state)?;
        states.push(std::mem::replace(&mut state, next));
    }
    states.push(state);
    Ok(Trajectory {
        tag: spec.tag(),
        states,
    })
}
