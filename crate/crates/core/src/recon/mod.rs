//! 2D reconstruction of direct-plane sinograms: a ray-driven (Joseph)
//! system matrix, OSEM / MLEM and a Gaussian postfilter.

pub mod filter;
pub mod osem;
pub mod projector;

pub use filter::gaussian_postfilter;
pub use osem::{mlem, osem, osem_with_hook, ReconConfig};
pub use projector::SystemMatrix;
