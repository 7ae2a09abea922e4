//! Handle-based shape deformation with bounded biharmonic weights.
//!
//! The deformation energy `A = L M^-1 L` comes either from a tetrahedral
//! mesh ([`fem`]), from a learned point-cloud model ([`lapnet`]) or from a
//! Gaussian KNN graph ([`pcl`]). [`bbw`] turns it into per-handle weights and
//! [`deform`] blends handle transforms with them.

pub mod bbw;
pub mod deform;
pub mod error;
pub mod fem;
pub mod geom;
pub mod lapnet;
pub mod linalg;
pub mod metrics;
pub mod pcl;
pub mod sparse;

pub use bbw::{solve_bbw, BbwOptions, HandleSet, QpReport, WeightMatrix};
pub use deform::{handles_from_fps, lbs_deform, AffineTransform, DeformationRequest};
pub use error::{Error, Result};
pub use fem::{cotan_laplacian, deformation_energy, fem_energy, inverse_mass, lumped_mass};
pub use geom::{KnnIndex, PointCloud, SurfaceMesh, TetMesh, Vec3};
pub use lapnet::{LapNetParams, Prediction, TrainConfig};
pub use metrics::{EnergySource, EvalOptions, EvalReport};
pub use sparse::{DiagMatrix, SparseSymMatrix};
