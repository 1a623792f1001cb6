//! Differentiable volume-rendering laboratory built around signed ray
//! distances.
//!
//! The crate pairs an exact analytic scene oracle (CSG unions of primitives
//! with closed-form SDF, ray intersections and signed ray distances) with a
//! small reverse-mode autodiff engine, a three-head neural field, Laplace-CDF
//! density transforms for both SDF- and SRDF-parameterized volume rendering,
//! the full training loss stack, marching-cubes meshing and reconstruction
//! metrics.

pub mod ad;
pub mod camera;
pub mod field;
pub mod geom;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod train;

pub use camera::Camera;
pub use geom::{Aabb, Vec3};
pub use scene::Scene;
