//! Differentiable building blocks: a reverse-mode tape, MLPs, gated
//! cross-attention, AdamW with a warmup-cosine schedule, finite-difference
//! gradient checks and checkpoint IO.

pub mod attention;
pub mod batch;
pub mod checkpoint;
pub mod gradcheck;
pub mod layout;
pub mod mlp;
pub mod optim;
pub mod tape;

pub use attention::{gated_cross_attention, GatedCrossAttention};
pub use batch::{batch_gradients, train_loop, StepLog};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layout::{Dense, Init, ParamLayout};
pub use mlp::{mlp_backward, mlp_forward, Mlp, MlpTape};
pub use optim::{adamw_step, lr_schedule, OptimizerConfig, ParamStore, ADAM_EPS};
pub use tape::{Adjoints, SparseMap, Tape, Var};
