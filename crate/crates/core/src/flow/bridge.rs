//! Softened sources, linear bridges, velocities and the two equivalent forms
//! of the flow-matching loss.

use crate::error::{LgsError, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(LgsError::Shape(format!("vectors of length {} and {}", a.len(), b.len())))
    }
}

/// `(1 - k) x0 + k z`.
pub fn soften_source(x0: &[f64], k: f64, z: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&k) {
        return Err(LgsError::Precondition(format!("knob k = {k} outside [0, 1]")));
    }
    same_len(x0, z)?;
    Ok(x0.iter().zip(z).map(|(a, b)| (1.0 - k) * a + k * b).collect())
}

/// `(1 - t) x0_soft + t x1` for `t` in `[0, 1)`.
pub fn bridge_state(x0_soft: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&t) {
        return Err(LgsError::Precondition(format!("bridge time t = {t} outside [0, 1)")));
    }
    same_len(x0_soft, x1)?;
    Ok(x0_soft.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// `x1 - x0_soft`.
pub fn target_velocity(x0_soft: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
    same_len(x0_soft, x1)?;
    Ok(x1.iter().zip(x0_soft).map(|(b, a)| b - a).collect())
}

/// `(x1 - x_t) / (1 - t)`. Callers keep `1 - t >= tau`.
pub fn target_velocity_from_bridge(x_t: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    same_len(x_t, x1)?;
    let den = 1.0 - t;
    Ok(x1.iter().zip(x_t).map(|(b, a)| (b - a) / den).collect())
}

/// Clamped divisor `max(1 - t, tau)`.
#[inline]
pub fn clamped_gap(t: f64, tau: f64) -> f64 {
    (1.0 - t).max(tau)
}

/// `(x_hat1 - x_t) / max(1 - t, tau)`.
pub fn induced_velocity(x_hat1: &[f64], x_t: &[f64], t: f64, tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(LgsError::Precondition(format!("tau must be positive, got {tau}")));
    }
    same_len(x_hat1, x_t)?;
    let den = clamped_gap(t, tau);
    Ok(x_hat1.iter().zip(x_t).map(|(a, b)| (a - b) / den).collect())
}

/// Endpoint form `||x_hat1 - x1||^2 / max(1 - t, tau)^2`.
pub fn fm_loss_endpoint(x_hat1: &[f64], x1: &[f64], t: f64, tau: f64) -> Result<f64> {
    same_len(x_hat1, x1)?;
    let den = clamped_gap(t, tau);
    let sq: f64 = x_hat1.iter().zip(x1).map(|(a, b)| (a - b) * (a - b)).sum();
    let loss = sq / (den * den);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LgsError::FatalNumeric {
            what: "flow-matching loss".into(),
            index: 0,
        })
    }
}

/// Velocity form `||v - u||^2` with both velocities divided by the same
/// clamped gap.
pub fn fm_loss_velocity(x_hat1: &[f64], x_t: &[f64], x1: &[f64], t: f64, tau: f64) -> Result<f64> {
    let v = induced_velocity(x_hat1, x_t, t, tau)?;
    let u = induced_velocity(x1, x_t, t, tau)?;
    let loss: f64 = v.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LgsError::FatalNumeric {
            what: "flow-matching loss".into(),
            index: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn soften_examples() {
        let z = [5.0, -7.0];
        assert_eq!(soften_source(&[1.0, 2.0], 0.0, &z).unwrap(), vec![1.0, 2.0]);
        assert_eq!(soften_source(&[1.0, 2.0], 1.0, &z).unwrap(), z.to_vec());
        assert_eq!(soften_source(&[2.0], 0.5, &[-1.0]).unwrap(), vec![0.5]);
        assert!(soften_source(&[2.0], 1.5, &[0.0]).is_err());
        assert!(soften_source(&[2.0], -0.1, &[0.0]).is_err());
    }

    #[test]
    fn bridge_examples() {
        assert_eq!(bridge_state(&[3.0], &[9.0], 0.0).unwrap(), vec![3.0]);
        assert_eq!(bridge_state(&[0.0], &[2.0], 0.25).unwrap(), vec![0.5]);
        let (a, b) = ([1.0, -1.0], [4.0, 3.0]);
        let x = bridge_state(&a, &b, 0.999).unwrap();
        let gap: f64 = x.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(gap <= 0.001 * 5.0 + 1e-12);
        assert!(bridge_state(&a, &b, 1.0).is_err());
    }

    #[test]
    fn velocity_examples() {
        for t in [0.0, 0.3, 0.9] {
            let xt = bridge_state(&[0.0], &[1.0], t).unwrap();
            assert!((target_velocity_from_bridge(&xt, &[1.0], t).unwrap()[0] - 1.0).abs() < 1e-15);
        }
        assert_eq!(target_velocity(&[0.0], &[1.0]).unwrap(), vec![1.0]);
        assert_eq!(target_velocity(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn induced_velocity_examples() {
        assert_eq!(induced_velocity(&[1.0], &[1.0], 0.4, 0.05).unwrap(), vec![0.0]);
        let v = induced_velocity(&[1.0], &[0.0], 0.99, 0.05).unwrap();
        assert!((v[0] - 20.0).abs() < 1e-12);
        let v = induced_velocity(&[0.1], &[0.0], 0.5, 0.05).unwrap();
        assert!((v[0] - 0.2).abs() < 1e-15);
        assert!(induced_velocity(&[0.0], &[0.0], 0.5, 0.0).is_err());
    }

    #[test]
    fn loss_scaling_and_zero() {
        let x1 = [1.0, 2.0];
        assert_eq!(fm_loss_endpoint(&x1, &x1, 0.3, 0.05).unwrap(), 0.0);
        let a = fm_loss_endpoint(&[1.5, 2.0], &x1, 0.3, 0.05).unwrap();
        let b = fm_loss_endpoint(&[2.0, 2.0], &x1, 0.3, 0.05).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn dual_forms_agree_on_random_draws() {
        let mut r = rng::stream(42, &[]);
        for _ in 0..2000 {
            let d = 5;
            let x0 = rng::standard_normal_vec(&mut r, d);
            let x1 = rng::standard_normal_vec(&mut r, d);
            let xh = rng::standard_normal_vec(&mut r, d);
            let t = r.random_range(0.0..0.95);
            let xt = bridge_state(&x0, &x1, t).unwrap();
            let u1 = target_velocity(&x0, &x1).unwrap();
            let u2 = target_velocity_from_bridge(&xt, &x1, t).unwrap();
            for (a, b) in u1.iter().zip(&u2) {
                assert!((a - b).abs() < 1e-10);
            }
            let le = fm_loss_endpoint(&xh, &x1, t, 0.05).unwrap();
            let lv = fm_loss_velocity(&xh, &xt, &x1, t, 0.05).unwrap();
            assert!((le - lv).abs() <= 1e-10 * le.max(1.0));
        }
    }

    #[test]
    fn softening_displacement_matches_its_expectation() {
        // E_z |soften(x0, k, z) - x0|^2 = k^2 (|x0|^2 + d)
        let d = 6;
        let x0 = rng::standard_normal_vec(&mut rng::stream(7, &[0]), d);
        let mut r = rng::stream(7, &[1]);
        let n = 20_000;
        for k in [0.1, 0.3, 0.8] {
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let z = rng::standard_normal_vec(&mut r, d);
                    let s = soften_source(&x0, k, &z).unwrap();
                    s.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = k * k * (x0.iter().map(|v| v * v).sum::<f64>() + d as f64);
            assert!((mean - expected).abs() <= 3.0 * (var / n as f64).sqrt(), "k={k}: {mean} vs {expected}");
        }
    }
}
