//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default (see [`RunConfig::default`]) and unknown keys are rejected.
//! [`RunConfig::to_text`] writes every key and re-parses to an equal value.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{CodecConfig, CodecTrainConfig};
use crate::error::{LgsError, Result};
use crate::flow::{AblationMode, FlowConfig, FlowTrainConfig, KnobPolicy};
use crate::nn::OptimizerConfig;
use crate::rollout::RolloutConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    // corpus
    pub systems: Vec<String>,
    pub grid: usize,
    pub per_system: usize,
    pub n_steps: usize,

    // codec
    pub d_latent: usize,
    pub pool: usize,
    pub codec_hidden: usize,
    pub kl_beta: f64,
    pub codec_steps: u64,
    pub codec_lr: f64,
    pub codec_batch: usize,
    pub codec_beta1: f64,
    pub codec_beta2: f64,
    pub shift_augment: bool,

    // flow model
    pub mode: AblationMode,
    pub d_ctx: usize,
    pub n_ctx: usize,
    pub patch: usize,
    pub pyramid_factor: usize,
    pub flow_hidden: usize,
    pub context_length: usize,
    pub tau: f64,
    pub k_max: f64,
    pub steps: u64,
    pub lr: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub checkpoint_every: u64,

    // inference and evaluation
    pub k_infer: f64,
    pub ode_steps: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub ensemble_size: usize,
    pub horizons: Vec<usize>,
    pub eval_stride: usize,

    // bounds
    pub bound_lipschitz: f64,
    pub bound_bias: f64,
    pub bound_horizon: usize,
    pub contraction_trials: usize,
    pub probe_scale: f64,

    // inputs
    pub corpus_dir: Option<PathBuf>,
    pub codec_ckpt: Option<PathBuf>,
    pub latent_dir: Option<PathBuf>,
    pub flow_ckpt: Option<PathBuf>,
    pub baseline_ckpt: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Smoke-scale settings: three toy systems on a 16-point grid.
    fn default() -> Self {
        Self {
            seed: 0,
            systems: vec!["heat1d".into(), "advection1d".into(), "heat2d".into()],
            grid: 16,
            per_system: 200,
            n_steps: 20,
            d_latent: 32,
            pool: 2,
            codec_hidden: 128,
            kl_beta: 1e-6,
            codec_steps: 5000,
            codec_lr: 2e-3,
            codec_batch: 32,
            codec_beta1: 0.9,
            codec_beta2: 0.995,
            shift_augment: false,
            mode: AblationMode::Full,
            d_ctx: 32,
            n_ctx: 4,
            patch: 4,
            pyramid_factor: 2,
            flow_hidden: 256,
            context_length: 4,
            tau: 0.05,
            k_max: 0.02,
            steps: 8000,
            lr: 1e-3,
            batch: 32,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-4,
            warmup_frac: 0.1,
            checkpoint_every: 1000,
            k_infer: 0.01,
            ode_steps: 10,
            epsilon: 0.05,
            horizon: 10,
            ensemble_size: 8,
            horizons: vec![1, 5, 10],
            eval_stride: 2,
            bound_lipschitz: 1.2,
            bound_bias: 0.01,
            bound_horizon: 20,
            contraction_trials: 10_000,
            probe_scale: 1e-3,
            corpus_dir: None,
            codec_ckpt: None,
            latent_dir: None,
            flow_ckpt: None,
            baseline_ckpt: None,
            resume: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| LgsError::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Generates the key table once so that parsing and writing cannot drift.
macro_rules! keys {
    ($( $key:ident : $kind:ident ),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Applies one `key = value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($key) => keys!(@parse self, $key, $kind, value),)*
                    other => return Err(LgsError::Config(format!("unknown key `{other}`"))),
                }
                Ok(())
            }

            /// Every key, one per line, in a fixed order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(
                    s.push_str(stringify!($key));
                    s.push_str(" = ");
                    s.push_str(&keys!(@show self, $key, $kind));
                    s.push('\n');
                )*
                s
            }
        }
    };
    (@parse $s:ident, $key:ident, scalar, $v:ident) => { $s.$key = parse(stringify!($key), $v)? };
    (@parse $s:ident, $key:ident, list, $v:ident) => { $s.$key = parse_list(stringify!($key), $v)? };
    (@parse $s:ident, $key:ident, path, $v:ident) => { $s.$key = parse_path($v) };
    (@show $s:ident, $key:ident, scalar) => { $s.$key.to_string() };
    (@show $s:ident, $key:ident, list) => { join(&$s.$key) };
    (@show $s:ident, $key:ident, path) => { show_path(&$s.$key) };
}

keys! {
    seed: scalar,
    systems: list,
    grid: scalar,
    per_system: scalar,
    n_steps: scalar,
    d_latent: scalar,
    pool: scalar,
    codec_hidden: scalar,
    kl_beta: scalar,
    codec_steps: scalar,
    codec_lr: scalar,
    codec_batch: scalar,
    codec_beta1: scalar,
    codec_beta2: scalar,
    shift_augment: scalar,
    mode: scalar,
    d_ctx: scalar,
    n_ctx: scalar,
    patch: scalar,
    pyramid_factor: scalar,
    flow_hidden: scalar,
    context_length: scalar,
    tau: scalar,
    k_max: scalar,
    steps: scalar,
    lr: scalar,
    batch: scalar,
    beta1: scalar,
    beta2: scalar,
    weight_decay: scalar,
    warmup_frac: scalar,
    checkpoint_every: scalar,
    k_infer: scalar,
    ode_steps: scalar,
    epsilon: scalar,
    horizon: scalar,
    ensemble_size: scalar,
    horizons: list,
    eval_stride: scalar,
    bound_lipschitz: scalar,
    bound_bias: scalar,
    bound_horizon: scalar,
    contraction_trials: scalar,
    probe_scale: scalar,
    corpus_dir: path,
    codec_ckpt: path,
    latent_dir: path,
    flow_ckpt: path,
    baseline_ckpt: path,
    resume: path,
}

impl RunConfig {
    /// Defaults overridden by the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LgsError::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(key, value)
                .map_err(|e| LgsError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LgsError::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| LgsError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| LgsError::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(k, v)
    }

    /// Range checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LgsError::Config(m));
        if self.systems.is_empty() {
            return fail("systems must name at least one system".into());
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) || self.horizons[0] == 0 {
            return fail(format!("horizons must be positive and strictly ascending, got {:?}", self.horizons));
        }
        if self.horizons[self.horizons.len() - 1] > self.horizon {
            return fail(format!(
                "largest evaluation horizon {} exceeds rollout horizon {}",
                self.horizons[self.horizons.len() - 1],
                self.horizon
            ));
        }
        if !(0.0..=1.0).contains(&self.k_max) {
            return fail(format!("k_max {} outside [0, 1]", self.k_max));
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau {} must be positive", self.tau));
        }
        if self.batch == 0 || self.codec_batch == 0 || self.eval_stride == 0 {
            return fail("batch sizes and eval_stride must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        if self.contraction_trials == 0 || self.bound_horizon == 0 {
            return fail("contraction_trials and bound_horizon must be positive".into());
        }
        self.codec_train().opt.validate()?;
        self.flow_train().opt.validate()?;
        self.rollout().validate()
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            grid: self.grid,
            pool: self.pool,
            d_latent: self.d_latent,
            hidden: self.codec_hidden,
        }
    }

    pub fn codec_train(&self) -> CodecTrainConfig {
        CodecTrainConfig {
            beta: self.kl_beta,
            batch: self.codec_batch,
            seed: self.seed,
            opt: OptimizerConfig {
                beta1: self.codec_beta1,
                beta2: self.codec_beta2,
                weight_decay: self.weight_decay,
                base_lr: self.codec_lr,
                total_steps: self.codec_steps,
                warmup_frac: self.warmup_frac,
            },
        }
    }

    pub fn flow(&self) -> FlowConfig {
        self.flow_with_mode(self.mode)
    }

    pub fn flow_with_mode(&self, mode: AblationMode) -> FlowConfig {
        FlowConfig {
            d_latent: self.d_latent,
            d_ctx: self.d_ctx,
            n_ctx: self.n_ctx,
            patch: self.patch,
            pyramid_factor: self.pyramid_factor,
            hidden: self.flow_hidden,
            context_length: self.context_length,
            tau: self.tau,
            mode,
        }
    }

    pub fn flow_train(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            batch: self.batch,
            seed: self.seed,
            knob: KnobPolicy::Uniform { k_max: self.k_max },
            opt: OptimizerConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                weight_decay: self.weight_decay,
                base_lr: self.lr,
                total_steps: self.steps,
                warmup_frac: self.warmup_frac,
            },
        }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            k_infer: self.k_infer,
            ode_steps: self.ode_steps,
            epsilon: self.epsilon,
            horizon: self.horizon,
            seed: self.seed,
            ensemble_size: self.ensemble_size,
        }
    }
}
