//! Adaptive enriched Galerkin (EG) finite elements for the linear parabolic
//! problem `p_t - div(K grad p) = f` on quadtree meshes of square cells.
//!
//! The crate covers the whole pipeline: quadtree meshes with 1-irregular
//! refinement and coarsening, the EG space (continuous `Q_k` plus cell
//! constants), interior-penalty assembly with backward Euler in time,
//! residual-based error indicators, Dörfler-marking adaptivity, the
//! L-shaped-domain benchmark problems, and a driver with CSV/SVG/VTK output.

pub mod adapt;
pub mod assembly;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod space;
pub mod sparse;

pub use error::{ConfigError, Error, MeshError, SolveError, SpaceError};
pub use geometry::Point2;
pub use mesh::{DomainShape, Mesh};
pub use space::{DiscreteField, EgSpace};
