//! Clips, their on-disk layout, canvas transforms, the synthetic benchmark and
//! the constant-velocity baseline.

pub mod canvas;
pub mod clip;
pub mod cvh;
pub mod geometry;
pub mod store;
pub mod synth;

pub use canvas::{apply_homography, canvas_track, to_first_frame_canvas, CanvasTrack};
pub use clip::{split_past_future, Clip, DimMode, HorizonSplit, JointSet, PointCloud, SplitSpec};
pub use cvh::cvh_baseline;
pub use store::{
    load_clip, load_index, load_split, save_clip, save_dataset, DatasetIndex, IndexEntry, Split,
};
pub use synth::{synth_clip, synth_generate, Scenario, SynthConfig};
