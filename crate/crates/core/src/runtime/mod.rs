//! Sliding-window streaming inference, the live wire format, and pose export.

mod export;
mod live;
mod stream;
mod wire;

pub use export::{read_jsonl, write_bvh, write_jsonl, write_jsonl_record, ExportFormat, PoseRecord};
pub use live::{run_stream, StreamOptions, StreamSummary};
pub use stream::{Emitted, StreamState, TimingStats};
pub use wire::{format_frame, parse_record, FrameAssembler, WireRecord};
