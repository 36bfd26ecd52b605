//! Endpoint predictor, physics context and the token pyramid.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{LgsError, Result};
use crate::nn::{GatedCrossAttention, Init, Mlp, ParamLayout, SparseMap, Tape, Var};

/// Width of the sinusoidal time embedding.
pub const TIME_EMBED: usize = 16;

/// Training/inference variant. Each ablation removes one more component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationMode {
    Full,
    /// No temporal pyramid.
    A1NoPyramid,
    /// Additionally no persistent context: a fresh readout over the
    /// concatenated predicted history every step.
    A2NoContext,
    /// Additionally the knob is muted (k = 0).
    A3NoKnob,
    /// Additionally direct regression of the next state.
    A4Regression,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::A1NoPyramid,
        AblationMode::A2NoContext,
        AblationMode::A3NoKnob,
        AblationMode::A4Regression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::A1NoPyramid => "a1",
            AblationMode::A2NoContext => "a2",
            AblationMode::A3NoKnob => "a3",
            AblationMode::A4Regression => "a4",
        }
    }

    pub fn uses_pyramid(self) -> bool {
        self == AblationMode::Full
    }

    pub fn persistent_context(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::A1NoPyramid)
    }

    pub fn knob_muted(self) -> bool {
        matches!(self, AblationMode::A3NoKnob | AblationMode::A4Regression)
    }

    pub fn regression(self) -> bool {
        self == AblationMode::A4Regression
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = LgsError;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| LgsError::Config(format!("unknown mode `{s}` (full, a1, a2, a3, a4)")))
    }
}

/// How the knob `k` is drawn during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnobPolicy {
    Uniform { k_max: f64 },
    Fixed(f64),
}

impl KnobPolicy {
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            KnobPolicy::Uniform { k_max } if k_max > 0.0 => rng.random_range(0.0..k_max),
            KnobPolicy::Uniform { .. } => 0.0,
            KnobPolicy::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsContext {
    pub tokens: Vec<Vec<f64>>,
    pub step_index: usize,
}

/// Context together with the predicted states it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub context: PhysicsContext,
    pub history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub d_latent: usize,
    pub d_ctx: usize,
    pub n_ctx: usize,
    pub patch: usize,
    pub pyramid_factor: usize,
    pub hidden: usize,
    pub context_length: usize,
    pub tau: f64,
    pub mode: AblationMode,
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub cfg: FlowConfig,
    layout: ParamLayout,
    head: Mlp,
    head_skip: usize,
    c_init: usize,
    tok_w: usize,
    tok_b: usize,
    pos: usize,
    max_patches: usize,
    gca: GatedCrossAttention,
    pool: Option<Arc<SparseMap>>,
}

/// Average-pool a vector by `factor`, zero-padding the tail to a multiple
/// of `factor` first.
pub fn pool_latent(x: &[f64], factor: usize) -> Vec<f64> {
    pool_map(x.len(), factor).apply(x)
}

fn pool_map(len: usize, factor: usize) -> SparseMap {
    let out = len.div_ceil(factor);
    let w = 1.0 / factor as f64;
    SparseMap {
        in_len: len,
        rows: (0..out)
            .map(|i| (i * factor..((i + 1) * factor).min(len)).map(|j| (j, w)).collect())
            .collect(),
    }
}

/// Keep the newest state (last entry) at full resolution and average-pool
/// all earlier ones by `factor`.
pub fn pyramid_downsample(history: &[Vec<f64>], factor: usize) -> Result<Vec<Vec<f64>>> {
    if factor == 0 {
        return Err(LgsError::Precondition("pyramid factor must be at least 1".into()));
    }
    let n = history.len();
    Ok(history
        .iter()
        .enumerate()
        .map(|(i, h)| {
            if i + 1 == n || factor == 1 {
                h.clone()
            } else {
                pool_latent(h, factor)
            }
        })
        .collect())
}

/// Number of attention tokens produced from `states` with patch width `patch`.
pub fn token_count(states: &[Vec<f64>], patch: usize) -> usize {
    states.iter().map(|s| s.len().div_ceil(patch)).sum()
}

/// `[sin(w_i t), cos(w_i t)]` with `w_i = (i + 1) pi / 2`.
pub fn time_embedding(t: f64) -> Vec<f64> {
    let mut e = Vec::with_capacity(TIME_EMBED);
    for i in 0..TIME_EMBED / 2 {
        let w = std::f64::consts::FRAC_PI_2 * (i + 1) as f64;
        e.push((w * t).sin());
        e.push((w * t).cos());
    }
    e
}

impl FlowModel {
    pub fn new(cfg: FlowConfig) -> Result<Self> {
        if cfg.d_latent == 0 || cfg.d_ctx == 0 || cfg.n_ctx == 0 || cfg.patch == 0 || cfg.hidden == 0 {
            return Err(LgsError::Config(format!("flow model sizes must be positive: {cfg:?}")));
        }
        if cfg.context_length < 2 {
            return Err(LgsError::Config("context_length must be at least 2".into()));
        }
        if cfg.pyramid_factor == 0 {
            return Err(LgsError::Config("pyramid_factor must be at least 1".into()));
        }
        if !(cfg.tau > 0.0 && cfg.tau < 1.0) {
            return Err(LgsError::Config(format!("tau must lie in (0, 1), got {}", cfg.tau)));
        }
        let d = cfg.d_latent;
        let mut layout = ParamLayout::new();
        let input = d + TIME_EMBED + cfg.d_ctx;
        let head = Mlp::new(&mut layout, "head", &[input, cfg.hidden, cfg.hidden, d]);
        let head_skip = layout.alloc("head.skip", d * input, Init::FanIn(input));
        let c_init = layout.alloc("ctx.init", cfg.n_ctx * cfg.d_ctx, Init::FanIn(cfg.d_ctx));
        let tok_w = layout.alloc("tok.w", cfg.d_ctx * cfg.patch, Init::FanIn(cfg.patch));
        let tok_b = layout.alloc("tok.b", cfg.d_ctx, Init::Zeros);
        let max_patches = d.div_ceil(cfg.patch);
        let pos = layout.alloc(
            "tok.pos",
            cfg.context_length.saturating_sub(1) * max_patches * cfg.d_ctx,
            Init::FanIn(cfg.d_ctx),
        );
        let gca = GatedCrossAttention::new(&mut layout, "gca", cfg.d_ctx);
        let pool = (cfg.mode.uses_pyramid() && cfg.pyramid_factor > 1)
            .then(|| Arc::new(pool_map(d, cfg.pyramid_factor)));
        Ok(Self {
            cfg,
            layout,
            head,
            head_skip,
            c_init,
            tok_w,
            tok_b,
            pos,
            max_patches,
            gca,
            pool,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total()
    }

    pub fn gca(&self) -> &GatedCrossAttention {
        &self.gca
    }

    pub fn arch(&self) -> String {
        let c = &self.cfg;
        format!(
            "flow mode={} d={} d_ctx={} n_ctx={} patch={} factor={} hidden={} L={}|{}",
            c.mode,
            c.d_latent,
            c.d_ctx,
            c.n_ctx,
            c.patch,
            c.pyramid_factor,
            c.hidden,
            c.context_length,
            self.layout.arch()
        )
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.init(seed)
    }

    /// Predicted states kept for attention.
    pub fn history_cap(&self) -> usize {
        self.cfg.context_length - 1
    }

    fn check_latent(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.cfg.d_latent {
            Ok(())
        } else {
            Err(LgsError::Shape(format!(
                "latent has length {}, model expects {}",
                x.len(),
                self.cfg.d_latent
            )))
        }
    }

    fn check_context(&self, c: &PhysicsContext) -> Result<()> {
        if c.tokens.len() != self.cfg.n_ctx || c.tokens.iter().any(|t| t.len() != self.cfg.d_ctx) {
            return Err(LgsError::Shape(format!(
                "context must hold {} tokens of width {}",
                self.cfg.n_ctx, self.cfg.d_ctx
            )));
        }
        Ok(())
    }

    pub fn initial_context_tape(&self, tape: &mut Tape) -> Vec<Var> {
        let d = self.cfg.d_ctx;
        (0..self.cfg.n_ctx)
            .map(|i| tape.param(self.c_init + i * d, d))
            .collect()
    }

    /// `g(x_t, t, c)`: MLP with a linear shortcut over
    /// `[x_t | time embedding | mean context token]`.
    pub fn predict_endpoint_tape(&self, tape: &mut Tape, x_t: Var, t: f64, ctx: &[Var]) -> Var {
        let temb = tape.constant(time_embedding(t));
        let pooled = tape.mean_of(ctx);
        let input = tape.concat(&[x_t, temb, pooled]);
        let deep = self.head.forward_tape(tape, input);
        let n_in = self.head.in_len();
        let lin = tape.linear(input, self.head_skip, None, self.cfg.d_latent, n_in);
        tape.add(deep, lin)
    }

    /// Embedded attention tokens for a history ordered oldest to newest;
    /// only the newest `history_cap` entries are used.
    pub fn history_tokens_tape(&self, tape: &mut Tape, history: &[Var]) -> Vec<Var> {
        let p = self.cfg.patch;
        let dc = self.cfg.d_ctx;
        let history = &history[history.len().saturating_sub(self.history_cap())..];
        let n = history.len();
        let mut tokens = Vec::new();
        for (i, &h) in history.iter().enumerate() {
            let age = n - 1 - i;
            let state = match &self.pool {
                Some(m) if age > 0 => tape.sparse(h, m.clone()),
                _ => h,
            };
            let len = tape.len_of(state);
            let padded = if len.is_multiple_of(p) {
                state
            } else {
                let zeros = tape.constant(vec![0.0; p - len % p]);
                tape.concat(&[state, zeros])
            };
            for j in 0..len.div_ceil(p) {
                let patch = tape.slice(padded, j * p, p);
                let e = tape.linear(patch, self.tok_w, Some(self.tok_b), dc, p);
                let pos = tape.param(self.pos + (age * self.max_patches + j) * dc, dc);
                tokens.push(tape.add(e, pos));
            }
        }
        tokens
    }

    /// Context after the newest prediction was appended to `history`.
    pub fn update_context_tape(&self, tape: &mut Tape, ctx: &[Var], history: &[Var]) -> Result<Vec<Var>> {
        let tokens = self.history_tokens_tape(tape, history);
        if self.cfg.mode.persistent_context() {
            self.gca.forward_tape(tape, ctx, &tokens)
        } else {
            let init = self.initial_context_tape(tape);
            self.gca.forward_tape(tape, &init, &tokens)
        }
    }

    pub fn initial_conditioning(&self, params: &[f64]) -> Conditioning {
        let d = self.cfg.d_ctx;
        Conditioning {
            context: PhysicsContext {
                tokens: (0..self.cfg.n_ctx)
                    .map(|i| params[self.c_init + i * d..self.c_init + (i + 1) * d].to_vec())
                    .collect(),
                step_index: 0,
            },
            history: Vec::new(),
        }
    }

    pub fn predict_endpoint(&self, params: &[f64], x_t: &[f64], t: f64, c: &PhysicsContext) -> Result<Vec<f64>> {
        self.check_latent(x_t)?;
        self.check_context(c)?;
        let mut tape = Tape::new(params);
        let x = tape.constant(x_t.to_vec());
        let ctx: Vec<Var> = c.tokens.iter().map(|v| tape.constant(v.clone())).collect();
        let y = self.predict_endpoint_tape(&mut tape, x, t, &ctx);
        Ok(tape.value(y).to_vec())
    }

    /// New context after `x_hat_next`, given the predictions that preceded it.
    pub fn update_context(
        &self,
        params: &[f64],
        c: &PhysicsContext,
        x_hat_next: &[f64],
        prior_history: &[Vec<f64>],
    ) -> Result<PhysicsContext> {
        self.check_latent(x_hat_next)?;
        self.check_context(c)?;
        let mut tape = Tape::new(params);
        let ctx: Vec<Var> = c.tokens.iter().map(|v| tape.constant(v.clone())).collect();
        let keep = prior_history.len().min(self.history_cap() - 1);
        let mut hist: Vec<Var> = prior_history[prior_history.len() - keep..]
            .iter()
            .map(|h| tape.constant(h.clone()))
            .collect();
        hist.push(tape.constant(x_hat_next.to_vec()));
        let next = self.update_context_tape(&mut tape, &ctx, &hist)?;
        Ok(PhysicsContext {
            tokens: next.iter().map(|v| tape.value(*v).to_vec()).collect(),
            step_index: c.step_index + 1,
        })
    }

    /// Append a prediction and refresh the context.
    pub fn advance(&self, params: &[f64], cond: &mut Conditioning, x_hat: &[f64]) -> Result<()> {
        let context = self.update_context(params, &cond.context, x_hat, &cond.history)?;
        cond.history.push(x_hat.to_vec());
        let cap = self.history_cap();
        if cond.history.len() > cap {
            cond.history.drain(..cond.history.len() - cap);
        }
        cond.context = context;
        Ok(())
    }
}
