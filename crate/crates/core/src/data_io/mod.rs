//! Dataset discovery, video decoding and ground-truth labels.

mod labels;
mod manifest;
mod video;

pub use labels::{load_labels, LabelTrack};
pub use manifest::{
    build_manifest, list_frame_files, ClipEntry, ClipSource, DatasetManifest, DatasetSpec, Split,
    FRAME_EXTENSIONS,
};
pub use video::{extract_frames, frame_count, write_y4m, VIDEO_EXTENSIONS};
