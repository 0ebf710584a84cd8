//! Frames, windows, patches and the window loader.

mod frame;
mod loader;
mod patch;
mod window;

pub use frame::{preprocess, Frame, RawFrame, Standardizer, DEFAULT_FRAME_SIZE};
pub use loader::{
    throughput_benchmark, write_benchmark_csv, LoaderConfig, WindowIter, WindowLoader, WindowSpec,
};
pub use patch::{make_patches, PatchGrid, DEFAULT_PATCH};
pub use window::{make_windows, window_count, Batch, FrameWindow, DEFAULT_WINDOW};
