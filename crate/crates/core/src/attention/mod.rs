//! Reference relation-aware self-attention, generic over `f32` and `f64`.

mod checkpoint;
mod encoder;
mod kernel;
mod matrix;
mod scalar;
pub mod verify;

pub use checkpoint::{
    header_for, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
    CheckpointHeader, FieldSpec,
};
pub use encoder::{
    encode, init_tables, Encoder, EncoderCache, EncoderConfig, EncoderGrads, EncoderLayer, FeedForward, LayerNorm,
    DEFAULT_RELATION_INIT_SCALE, LAYER_NORM_EPS,
};
pub use kernel::{
    attend, attend_backward, attend_with_cache, AttentionCache, AttentionError, AttentionGrads,
    AttentionLayerParams, HeadWeights, RelationEmbeddingTables,
};
pub use matrix::Matrix;
pub use scalar::Scalar;
