//! KL-VAE encoder/decoder and its parameter storage.

mod checkpoint;
mod config;
mod layers;
mod params;
mod vae;

pub use checkpoint::{
    load_model, model_checkpoint, model_from_checkpoint, save_model, Checkpoint, Entry, FORMAT_VERSION, MAGIC, MODEL_PREFIX,
};
pub use config::{DecoderNorm, ModelConfig, PaddingPolicy};
pub use layers::{AttnBlock, Conv, ConvInit, ConvSpec, Ctx, Downsample, GroupNormAffine, Norm, NormKind, ResBlock, Scn, Upsample, NORM_EPS};
pub use params::{Binding, Init, ParamId, ParamStore};
pub use vae::{
    is_encoder_param, reparameterize, ActivationTrace, Decoded, LatentDistribution, LatentSample, TraceLayer, VaeModel,
    ENCODER_PREFIX, LOGVAR_MAX, LOGVAR_MIN,
};
