//! Sequence coding: GOP planning, model loading, frame I/O and statistics.

mod codec;
mod gop;
mod media;
mod model;

pub use codec::{
    decode_sequence, decode_sequence_detailed, encode_sequence, encode_sequence_with, gop_from_header, payload_sizes,
    DecodeOutput, EncodeOptions, EncodeOutput, FrameInfo,
};
pub use gop::{coding_order, ra_schedule, FrameKind, FramePlan, GopConfig, RaEntry, MAX_GOP_SIZE};
pub use media::{
    compute_stats, frame_mse, read_raw, synthetic_clip, write_raw, Frame, FrameStats, SequenceStats, RAW_MAGIC,
};
pub use model::{init_model, Model, ModelSource};

/// Statistics of a decoded stream against the originals.
pub fn stats(original: &[Frame], reconstructed: &[Frame], stream: &[u8]) -> crate::Result<SequenceStats> {
    compute_stats(original, reconstructed, &payload_sizes(stream)?, stream.len())
}
