//! Point clouds, ground-plane poses, spatial indexing, normals, blue-noise
//! hierarchies, static-plane detection and ICP.

pub mod cloud;
pub mod icp;
pub mod index;
pub mod normals;
pub mod plane;
pub mod pose;
pub mod sampling;

pub use cloud::{PointCloud, Vec3, STATIC_CLASS, UNASSIGNED};
pub use icp::{icp_point_to_plane, IcpConfig, IcpResult, IndexedCloud};
pub use index::{Neighbor, SpatialIndex};
pub use normals::{estimate_normals, NormalEstimate};
pub use plane::{detect_static, PlaneModel, StaticDetection, StaticDetectionConfig};
pub use pose::{wrap_angle, GroundPose};
pub use sampling::{
    build_hierarchy, poisson_disk_indices, poisson_disk_subsample, SamplingHierarchy,
    LEVEL_SPACINGS,
};
