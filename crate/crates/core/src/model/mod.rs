//! Masked-network autoencoder: embedding, encoder, decoders, heads and
//! checkpoints.

mod checkpoint;
mod config;
mod export;
mod forward;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use config::{DecoderMode, MaskMode, ModelConfig};
pub use export::{write_attention_csv, ATTENTION_CSV_HEADER};
pub use forward::{
    bind, classify, classify_pooled, decode_ablation_self, decode_masked, embed_rows, encode, l2_norm, masked_targets,
    pooled, reconstruct, reconstruction_loss, softmax, AttnRecord, Bound, Reconstruction,
};
pub use params::{Attention, DecoderBlock, EncoderBlock, Layout, Linear, Mlp, ModelState, Norm};
