//! Straightening of bent tubular specimens in scalar volumes.
//!
//! The automatic stage thresholds a volume, meshes the occupied region into tetrahedra, solves
//! a harmonic field between two user-chosen endpoints and turns its level sets into a framed
//! skeleton. A greedy prism subdivision keeps the fewest keyframes that cover the skeleton,
//! giving a [`DeformationRig`]. The rig drives the warp `f(x, y, z) = c(z) + x u(z) + y v(z)`
//! used to resample the volume into a straight pose ([`straighten`]) and back ([`bend`]).
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases at the crate root
//! fix `f64`.

pub mod deform;
pub mod error;
pub mod geom;
pub mod harmonic;
pub mod mesh;
pub mod pipeline;
pub mod rig;
pub mod scalar;
pub mod session;
pub mod skeleton;
pub mod synth;
pub mod volume;

pub use deform::{
    bend, budgeted_spec, cross_section, eval_deformation, export_volume, max_intensity_projections, straight_origin,
    straighten, Image2D, StraightVolumeSpec,
};
pub use error::{Error, Result};
pub use geom::{slerp, Frame, Vector3};
pub use harmonic::{solve_harmonic, solve_harmonic_with, HarmonicField, SolverOptions};
pub use mesh::{tetrahedralize, TetMesh};
pub use pipeline::{build_rig, extract_skeleton, prism_radius, rig_endpoints, PipelineParams, SkeletonRun};
pub use rig::{prism_contains, reduce_keyframes, DeformationRig, Edit, Keyframe, RigSample, FRAME_TOLERANCE};
pub use scalar::Real;
pub use session::{rig_distance, LogEntry, LogEvent, Session, VolumeRef, FORMAT_VERSION};
pub use skeleton::{
    compute_frames, extract_component_skeleton, isovalues, level_set_centroids, merge_component_skeletons,
    resample_uniform, smooth, EndpointSelection, FramedPolyline, Polyline, SkeletonParams,
};
pub use synth::{make_bent_cylinder, normalized_l2, occupied_correlation, BentCylinder, CylinderSpec};
pub use volume::{load_volume, write_volume_f32, OccupancyMask, ScalarType, ScalarVolume, VolumeGrid, VolumeMeta};

/// Level sets sampled from the harmonic field (`k`).
pub const DEFAULT_LEVEL_SETS: usize = 100;
/// Smoothing sweeps over the raw skeleton (`s`).
pub const DEFAULT_SMOOTHING_ITERATIONS: usize = 50;
/// Prism radius for keyframe reduction, in voxel widths (`r`).
pub const DEFAULT_PRISM_RADIUS_VOXELS: f64 = 10.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_VERTEX_BUDGET: usize = 400_000;

pub type Vec3 = Vector3<f64>;
pub type Frame3 = Frame<f64>;
pub type Volume = ScalarVolume<f64>;
pub type Volume32 = ScalarVolume<f32>;
pub type Mesh = TetMesh<f64>;
pub type Field = HarmonicField<f64>;
pub type Skeleton = FramedPolyline<f64>;
pub type Rig = DeformationRig<f64>;
pub type Rig32 = DeformationRig<f32>;
pub type Endpoints = EndpointSelection<f64>;
pub type Sess = Session<f64>;
