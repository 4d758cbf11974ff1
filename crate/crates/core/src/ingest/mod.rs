//! Interchange data model: activation streams, top-K stores, patch sets and
//! receptive-field geometry.

pub mod layer;
pub mod patch;
pub mod stream;
pub mod topk;

pub use layer::{
    layer_table, receptive_field, rf_table_csv, validate_layers, vgg16_ops, LayerOp, LayerSpec,
    Preset,
};
pub use patch::{load_patch_set, Patch, DEFAULT_PATCH_SIDE};
pub use stream::{
    parse_activation_stream, ActivationReader, ActivationRecord, LayerDecl, StreamHeader,
};
pub use topk::{rank_records, rank_stream, RankedEntry, RankedList, TopKStore, DEFAULT_K};
