//! Labeled benchmark of benign and attacked collaborator features, with a
//! seekable binary shard format.
//!
//! Shard layout (all integers little-endian):
//!
//! ```text
//! header  : b"CPGB" | u32 version | u32 C | u32 H | u32 W | u32 count
//! record  : u32 scene | u32 ego | u32 collaborator | u8 label | u8 attack
//!           | u16 pad | f32 budget | f32[C·H·W] ego | f32[C·H·W] collaborator
//! ```
//!
//! Attack codes: 0 none, 1 PGD, 2 BIM, 3 CW, 4 FGSM, 5 GN. The manifest
//! (`manifest.toml`) lists the shards in order, the feature dims, the split
//! ranges over stored order and the dataset statistics.

mod generate;
mod record;
mod shard;
mod split;
mod stats;

pub use generate::{
    assemble, attack_seed, frame_records, generate_dataset, plan_frame, regenerate_frame, FramePlan, GenConfig,
};
pub use record::{SampleRecord, RECORD_HEADER_BYTES};
pub use shard::{
    decode_shard, encode_shard, read_manifest, read_shards, shard_name, write_shards, Dataset, Manifest,
    FORMAT_VERSION, MANIFEST_FILE, SHARD_HEADER_BYTES, SHARD_MAGIC,
};
pub use split::{split, split_sizes, SplitPlan, SplitRanges, MIN_SPLIT_COUNT};
pub use stats::{compute_stats, DatasetStats};
