//! Per-turn context construction: a budgeted selection over pinned priors,
//! the task, retrieved memory and tool output, with a provenance manifest for
//! every selected segment.

mod assemble;
mod manifest;
mod segment;

pub use assemble::{assemble, refresh, score_segment, ContextAssembly, ContextError, RefreshReport, REFRESH_FRESHNESS_THRESHOLD};
pub use manifest::{Manifest, ManifestAnnotation, ManifestLine, ManifestRow};
pub use segment::{ContextSegment, Provenance, SegmentKind};
