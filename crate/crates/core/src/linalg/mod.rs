//! Dense kernels: symmetric eigensolvers, Gram orthonormalization, projectors,
//! and matrix-free Lanczos.

mod basis;
mod lanczos;
mod sym;
pub mod vector;

pub use basis::{gram, orthonormalize_buffer, project, OrthonormalBasis};
pub use lanczos::{lanczos_top_k, LanczosConfig};
pub use sym::{sym_eig, EigenPairs, SymMatrix};
