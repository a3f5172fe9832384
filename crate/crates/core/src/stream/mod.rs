//! History-aware streaming fusion: tracking, triangulation, deformation graphs, keyframes
//! and error-aware weighting around the fuse-and-refine pipeline.

pub mod fps;
pub mod fusion;
pub mod graph;
pub mod motion;
pub mod schedule;
pub mod step;
pub mod tracker;
pub mod triangulate;
pub mod warp;

pub use fps::fps_sample;
pub use fusion::{error_aware_weights, FusionWeights};
pub use graph::{build_deform_graph, lbs_warp, select_motion_anchors, DeformationGraph};
pub use motion::{Motion, MotionFile};
pub use schedule::{KeyframeSchedule, ScheduledKeyframe};
pub use step::{stream_step, MultiviewPredictor, OraclePredictor, SplatPredictor, StepOutput, StepSummary, StreamContext, StreamState};
pub use tracker::{FileTracker, GroundTruthTracker, IdentityTracker, TrackQuery, TrackResult, Tracker};
pub use triangulate::triangulate;
pub use warp::{warp_keyframe, Keyframe, WarpParams, WarpResult};
