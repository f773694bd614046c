//! Locally injective volumetric flattening of tetrahedral meshes.
//!
//! A mesh of a curved slab-like solid is mapped onto a flat template (two
//! parallel planes, a single plane or an ellipsoid) by minimizing a weighted
//! sum of a template-fit term and the symmetric Dirichlet distortion, with a
//! flip-free line search keeping every tet positively oriented. Scalar
//! volumes can then be pulled back through the piecewise-affine map.

pub mod baseline2d;
pub mod cli;
pub mod energy;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod parcellation;
pub mod resample;
pub mod sparse;
pub mod stats;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use mesh::{BoundaryTopology, Frame, TetMesh, Vec3};
