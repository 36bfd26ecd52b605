//! Toy PDE corpus: reference solvers, trajectories, binary IO and normalization.
//!
//! Every state is stored with [`CHANNELS`] channels; systems with fewer
//! physical fields leave the remaining channels at zero.

mod canvas;
mod corpus;
pub(crate) mod io;
mod system;
mod trajectory;

pub use canvas::{from_canvas, to_canvas};
pub use corpus::{
    generate_corpus, load_corpus, load_norm, load_split, split_counts, Corpus, CorpusSummary, NormStats,
    Split,
};
pub use io::{read_trajectories, write_trajectories, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};
pub use system::{step_system, SystemKind, SystemSpec, SystemTag};
pub use trajectory::{generate_trajectory, initial_condition, Trajectory};

/// Common channel count every state is padded to.
pub const CHANNELS: usize = 3;
