//! Semantic surfel mapping of ego-centric RGB-D sequences with 3D gaze
//! attribution.
//!
//! Frames are tracked against a surfel map by joint point-to-plane ICP and
//! photometric alignment, fused into the map, labelled by recursive Bayesian
//! fusion of per-pixel class probabilities, and grouped into persistent
//! object instances. Eye-tracker gaze samples are mapped into the RGB-D
//! image by a homography and attributed to the surfel, class and instance
//! they land on.

pub mod error;
pub mod frame;
pub mod gaze;
pub mod geometry;
pub mod instances;
pub mod io;
pub mod pipeline;
pub mod semantic;
pub mod spatial;
pub mod surfel_map;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use frame::{DepthImage, Frame, GrayImage, RgbImage};
pub use gaze::{accumulate_dwell, locate_gaze, map_gaze_pixel, GazeHit, GazeSample, HitSource};
pub use geometry::{
    apply_homography, backproject, calibrate_homography, compute_normals, project, CameraIntrinsics, Homography, Pose,
};
pub use instances::{extract_instances, match_instances, InstanceRegistry, ObjectInstance};
pub use pipeline::{PipelineConfig, PoseSource, RunSummary};
pub use semantic::{bayes_update, fuse_frame, surfel_class, ClassDistribution, ProbabilityFrame};
pub use surfel_map::{
    integrate, render_index_map, IndexMap, InstanceId, IntegrationReport, MapConfig, Surfel, SurfelId, SurfelMap,
};
pub use tracking::{estimate_pose, head_trajectory, TrackingConfig, TrackingResult, TrackingStatus};
