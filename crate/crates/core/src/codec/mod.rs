//! Stage I: a small variational codec between padded physical states and
//! latent vectors, its training loop and the latent trajectory cache.

mod cache;
mod model;
mod train;

pub use cache::{encode_dataset, LatentCache, LATENT_MAGIC, LATENT_VERSION};
pub use model::{
    codec_loss, kl_divergence, reparameterize, Codec, CodecConfig, CodecLoss, CodecOutput,
    LatentState, LOGVAR_CLAMP,
};
pub use train::{reconstruction_l2re, train_codec, CodecData, CodecTrainConfig};
