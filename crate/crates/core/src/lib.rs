//! Geometric 6D pose estimation for untextured CAD models.
//!
//! Surface points are described by rotation-invariant local surface
//! embeddings (LSEs); per-pixel embeddings are matched against a per-model
//! index to form 2D-3D correspondences, and poses are recovered per instance
//! mask with a locally optimised RANSAC around a PnP solver. Synthetic oracle
//! scenes stand in for learned embedding and mask predictors.

pub mod camera;
pub mod grid;
pub mod index;
pub mod kdtree;
pub mod lookup;
pub mod lse;
pub mod lsemap;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
mod ply;
pub mod raster;
pub mod robust;
pub mod synth;

pub use camera::{backproject, project, CameraError, CameraIntrinsics, Pose};
pub use index::{
    build_correspondences, build_index, discriminative_mask, suppress_clusters, Candidate, CorrespondenceSet,
    IndexEntry, IndexError, LseIndex, MatchParams, PixelMatch,
};
pub use lse::{
    fit_normalization, local_frame, lse_raw, normalize, LocalFrame, LseError, LseParams, LseVector,
    NormalizationStats,
};
pub use lsemap::LseMap;
pub use mesh::{
    load_mesh, model_diameter, radius_neighbors, sample_surface, MeshError, MeshFormat, ModelStats, PointSample,
    SurfaceMesh,
};
pub use metrics::{add_correct, add_error, adi_error, aggregate, vsd_error, MetricRecord, MetricReport, VsdParams};
pub use raster::{iou, mask_of, render, DepthMap, PixelMask, SceneMaps};
pub use robust::{estimate_all, refine_pose, solve_pnp, PoseError, PoseHypothesis, RansacConfig};
