//! P1 finite elements on `(0, 1)` with homogeneous Dirichlet conditions.

pub mod function;
pub mod mesh;
pub mod projection;
pub mod space;

pub use function::FemFunction;
pub use mesh::Mesh1D;
pub use projection::{elliptic_solve, l2_project, load_vector, ritz_project, LoadScratch, SineLoads, Source};
pub use space::{FemSpace, FemWorkspace};
