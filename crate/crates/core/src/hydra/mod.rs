//! The bidirectional block built on the quasiseparable mixer, its causal
//! counterpart, the token encoder stack, parameter accounting and the
//! checkpoint format.

mod checkpoint;
mod count;
mod encoder;
mod layer;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use count::{layer_parameter_count, ablation_scale_config, parameter_count_report, CountRow, ParamCountReport};
pub use encoder::{encoder_backward, encoder_forward, encoder_forward_cached, Encoder, EncoderCache, EncoderConfig};
pub use layer::{
    hydra_layer_backward, hydra_layer_forward, hydra_layer_forward_cached, HydraLayerParams, LayerCache, LayerDims,
    Mixing, NORM_EPS,
};
