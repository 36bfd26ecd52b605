//! Stage II: flow matching with a softened source, an endpoint-predicting
//! network, flow-forced context updates and the ablation ladder.

mod bridge;
mod model;
mod train;

pub use bridge::{
    bridge_state, clamped_gap, fm_loss_endpoint, fm_loss_velocity, induced_velocity,
    soften_source, target_velocity, target_velocity_from_bridge,
};
pub use model::{
    pool_latent, pyramid_downsample, time_embedding, token_count, AblationMode, Conditioning,
    FlowConfig, FlowModel, KnobPolicy, PhysicsContext, TIME_EMBED,
};
pub use train::{
    fm_loss, fm_loss_velocity_form, train_flow_forcing, window_index, window_loss, FlowBatch,
    FlowTrainConfig, WindowReport,
};
