//! File formats and the synthetic data generator.

mod activations;
mod checkpoint;
mod dataset;
mod scores;
mod synthetic;
mod tables;

pub use activations::{
    decode_activations, encode_activations, read_activations, write_activations, ACTV_HEADER_LEN, ACTV_MAGIC,
    ACTV_VERSION,
};
pub use checkpoint::{
    config_for, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, LoadedCheckpoint, CKPT_MAGIC,
    CKPT_VERSION, NORM_WARN_TOLERANCE,
};
pub use dataset::{ActivationDataset, Dtype};
pub use scores::{load_scores, parse_scores};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticSpec};
pub use tables::{
    config_hash, match_table, parse_match_table, parse_table, read_match_table, write_match_table, Cell, Table,
    MATCH_COLUMNS,
};
