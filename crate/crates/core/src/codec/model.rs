//! Pooling + MLP variational codec on the shared `[3, G, G]` canvas.
//!
//! Encoder and decoder heads are MLPs with an additional linear shortcut, so
//! the dominant linear structure of smooth fields is learned directly.

use std::sync::Arc;

use crate::error::{LgsError, Result};
use crate::nn::{Init, Mlp, ParamLayout, SparseMap, Tape, Var};
use crate::pde::CHANNELS;

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub grid: usize,
    pub pool: usize,
    pub d_latent: usize,
    pub hidden: usize,
}

/// A latent vector tagged with its physical step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub cfg: CodecConfig,
    layout: ParamLayout,
    enc: Mlp,
    dec: Mlp,
    enc_skip: usize,
    dec_skip: usize,
    down: Option<Arc<SparseMap>>,
    up: Option<Arc<SparseMap>>,
}

/// Strided average pooling of each channel by `p`.
fn pool_map(grid: usize, p: usize) -> SparseMap {
    let c = grid / p;
    let w = 1.0 / (p * p) as f64;
    let mut rows = Vec::with_capacity(CHANNELS * c * c);
    for ch in 0..CHANNELS {
        for cy in 0..c {
            for cx in 0..c {
                let mut row = Vec::with_capacity(p * p);
                for dy in 0..p {
                    for dx in 0..p {
                        row.push((ch * grid * grid + (cy * p + dy) * grid + cx * p + dx, w));
                    }
                }
                rows.push(row);
            }
        }
    }
    SparseMap {
        in_len: CHANNELS * grid * grid,
        rows,
    }
}

/// Periodic bilinear upsampling by `p`; fine cell `f` sits at coarse
/// coordinate `(f + 0.5) / p - 0.5`.
fn upsample_map(grid: usize, p: usize) -> SparseMap {
    let c = grid / p;
    let axis = |f: usize| {
        let u = (f as f64 + 0.5) / p as f64 - 0.5;
        let lo = u.floor();
        let frac = u - lo;
        let i0 = (lo as i64).rem_euclid(c as i64) as usize;
        ((i0, 1.0 - frac), ((i0 + 1) % c, frac))
    };
    let mut rows = Vec::with_capacity(CHANNELS * grid * grid);
    for ch in 0..CHANNELS {
        for fy in 0..grid {
            let ((y0, wy0), (y1, wy1)) = axis(fy);
            for fx in 0..grid {
                let ((x0, wx0), (x1, wx1)) = axis(fx);
                let mut row = Vec::with_capacity(4);
                for (yy, wy) in [(y0, wy0), (y1, wy1)] {
                    for (xx, wx) in [(x0, wx0), (x1, wx1)] {
                        if wy * wx != 0.0 {
                            row.push((ch * c * c + yy * c + xx, wy * wx));
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    SparseMap {
        in_len: CHANNELS * c * c,
        rows,
    }
}

impl Codec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        if cfg.pool == 0 || !cfg.grid.is_multiple_of(cfg.pool) {
            return Err(LgsError::Config(format!(
                "codec pool {} must divide grid {}",
                cfg.pool, cfg.grid
            )));
        }
        let full = CHANNELS * cfg.grid * cfg.grid;
        if cfg.d_latent == 0 || cfg.d_latent >= full {
            return Err(LgsError::Config(format!(
                "d_latent {} must lie in 1..{full} to compress the state",
                cfg.d_latent
            )));
        }
        let coarse = CHANNELS * (cfg.grid / cfg.pool).pow(2);
        let mut layout = ParamLayout::new();
        let enc = Mlp::new(&mut layout, "enc", &[coarse, cfg.hidden, cfg.hidden, 2 * cfg.d_latent]);
        let dec = Mlp::new(&mut layout, "dec", &[cfg.d_latent, cfg.hidden, cfg.hidden, coarse]);
        let enc_skip = layout.alloc("enc.skip", 2 * cfg.d_latent * coarse, Init::FanIn(coarse));
        let dec_skip = layout.alloc("dec.skip", coarse * cfg.d_latent, Init::FanIn(cfg.d_latent));
        let (down, up) = if cfg.pool > 1 {
            (
                Some(Arc::new(pool_map(cfg.grid, cfg.pool))),
                Some(Arc::new(upsample_map(cfg.grid, cfg.pool))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            cfg,
            layout,
            enc,
            dec,
            enc_skip,
            dec_skip,
            down,
            up,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total()
    }

    pub fn arch(&self) -> String {
        format!(
            "codec grid={} pool={} d={} hidden={}|{}",
            self.cfg.grid,
            self.cfg.pool,
            self.cfg.d_latent,
            self.cfg.hidden,
            self.layout.arch()
        )
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.init(seed)
    }

    pub fn state_len(&self) -> usize {
        CHANNELS * self.cfg.grid * self.cfg.grid
    }

    fn check(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(LgsError::Shape(format!("{what} has length {got}, codec expects {want}")))
        }
    }

    /// Returns `(mu, logvar)` nodes.
    pub fn encode_tape(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let h = match &self.down {
            Some(m) => tape.sparse(x, m.clone()),
            None => x,
        };
        let d = self.cfg.d_latent;
        let deep = self.enc.forward_tape(tape, h);
        let coarse = self.enc.in_len();
        let lin = tape.linear(h, self.enc_skip, None, 2 * d, coarse);
        let out = tape.add(deep, lin);
        let mu = tape.slice(out, 0, d);
        let lv = tape.slice(out, d, d);
        let lv = tape.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        (mu, lv)
    }

    pub fn decode_tape(&self, tape: &mut Tape, z: Var) -> Var {
        let deep = self.dec.forward_tape(tape, z);
        let lin = tape.linear(z, self.dec_skip, None, self.dec.out_len(), self.cfg.d_latent);
        let coarse = tape.add(deep, lin);
        match &self.up {
            Some(m) => tape.sparse(coarse, m.clone()),
            None => coarse,
        }
    }

    pub fn encode(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check("state", x.len(), self.state_len())?;
        let mut tape = Tape::new(params);
        let xv = tape.constant(x.to_vec());
        let (mu, lv) = self.encode_tape(&mut tape, xv);
        Ok((tape.value(mu).to_vec(), tape.value(lv).to_vec()))
    }

    pub fn decode(&self, params: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check("latent", z.len(), self.cfg.d_latent)?;
        let mut tape = Tape::new(params);
        let zv = tape.constant(z.to_vec());
        let y = self.decode_tape(&mut tape, zv);
        Ok(tape.value(y).to_vec())
    }

    /// Noise-free pass: encode, then decode the posterior mean.
    pub fn run(&self, params: &[f64], x: &[f64]) -> Result<CodecOutput> {
        let (mu, logvar) = self.encode(params, x)?;
        let reconstruction = self.decode(params, &mu)?;
        Ok(CodecOutput {
            mu,
            logvar,
            reconstruction,
        })
    }
}

pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(LgsError::Shape("mu, logvar and noise lengths differ".into()));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), z)| m + (0.5 * lv).exp() * z)
        .collect())
}

/// `0.5 * sum(exp(lv) + mu^2 - 1 - lv)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecLoss {
    pub total: f64,
    pub recon_mse: f64,
    pub kl: f64,
}

/// `recon_mse + beta * kl` for one state; adds the gradient into `grads`
/// when given.
pub fn codec_loss(
    codec: &Codec,
    params: &[f64],
    x: &[f64],
    beta: f64,
    noise: &[f64],
    grads: Option<&mut [f64]>,
) -> Result<CodecLoss> {
    if beta < 0.0 {
        return Err(LgsError::Precondition(format!("beta must be non-negative, got {beta}")));
    }
    codec.check("state", x.len(), codec.state_len())?;
    codec.check("noise", noise.len(), codec.cfg.d_latent)?;
    let mut tape = Tape::new(params);
    let xv = tape.constant(x.to_vec());
    let (mu, lv) = codec.encode_tape(&mut tape, xv);
    let half = tape.scale(lv, 0.5);
    let sd = tape.exp(half);
    let eps = tape.constant(noise.to_vec());
    let spread = tape.mul(sd, eps);
    let z = tape.add(mu, spread);
    let recon = codec.decode_tape(&mut tape, z);
    let diff = tape.sub(recon, xv);
    let sq = tape.sq_norm(diff);
    let mse = tape.scale(sq, 1.0 / x.len() as f64);
    // kl = 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
    let var = tape.exp(lv);
    let mu2 = tape.mul(mu, mu);
    let a = tape.add(var, mu2);
    let b = tape.sub(a, lv);
    let s = tape.sum(b);
    let kl_shift = tape.constant(vec![-(codec.cfg.d_latent as f64)]);
    let s = tape.add(s, kl_shift);
    let kl = tape.scale(s, 0.5);
    let weighted = tape.scale(kl, beta);
    let total = tape.add(mse, weighted);
    let out = CodecLoss {
        total: tape.scalar(total),
        recon_mse: tape.scalar(mse),
        kl: tape.scalar(kl),
    };
    if !out.total.is_finite() {
        return Err(LgsError::FatalNumeric {
            what: "codec loss".into(),
            index: 0,
        });
    }
    if let Some(g) = grads {
        tape.backward(total, &[1.0], g);
    }
    Ok(out)
}
