//! Tar-shard dataset plumbing: a ustar writer/reader built for strictly
//! sequential access, deterministic multi-source blending, mixed
//! image-video sequence packing with block-diagonal masks, and
//! rank-deduplicated shard distribution.

mod blend;
mod dedup;
mod pack;
mod sample;
mod tar;

pub use blend::{blend, BlendSpec, ExhaustionPolicy};
pub use dedup::{dedup_assign_and_distribute, DistributionMode, DownloadLedger};
pub use pack::{build_packed_mask, pack_sequences, PackSegment, PackedSequence};
pub use sample::{DatapipeError, Modality, Sample};
pub use tar::{
    read_shards, write_manifest, write_shards, DatasetManifest, ManifestShard, ShardInfo,
    TarMemberReader,
};
