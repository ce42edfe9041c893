//! Stereo road-hazard detection.
//!
//! The crate tests local patches of a rectified stereo pair against a
//! free-space and an obstacle plane hypothesis, fitting each by a projected
//! Levenberg-Marquardt search directly on image intensities. Two
//! parametrizations are provided:
//!
//! - [`hypothesis::pht_fit`] warps through the plane-induced homography and
//!   estimates the reference signal as the mean of both aligned images.
//! - [`hypothesis::fpht_fit`] restricts planes to zero lateral tilt, which
//!   turns the warp into a line in disparity space with two parameters and
//!   uses the left image as reference.
//!
//! Around the detectors sit a block-matching initializer ([`disparity`]),
//! the point-compatibility baseline ([`pc`]), the cluster-stixel mid-level
//! representation ([`cstix`]), a synthetic scene renderer with exact ground
//! truth ([`synth`]) and pixel/instance level evaluation ([`eval`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cstix;
pub mod disparity;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hypothesis;
pub mod imaging;
pub mod pc;
pub mod synth;
mod unionfind;

pub use cstix::{CStix, ClusterParams, ObstaclePoint, PointSource};
pub use disparity::BlockMatchConfig;
pub use error::{Error, Result};
pub use eval::{InstanceStats, ParamGrid, PixelCounts, RocPoint, SweepResult};
pub use geometry::{
    disparity_line_to_plane, homography_from_plane, plane_to_disparity_line, project_onto_wedge, triangulate,
    wedge_for_hypothesis, CameraRig, DisparityLine, FeasibleWedge, PatchSpec, Plane3D,
};
pub use hypothesis::{DetectorConfig, HypothesisFit, Method, PatchDecision, Verdict};
pub use imaging::{DisparityMap, IntensityImage, LabelMap, PatchGrid};
pub use pc::PcParams;
pub use synth::{GroundTruthBundle, SceneSpec};
