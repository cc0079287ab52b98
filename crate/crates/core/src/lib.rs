//! Batched finite-element integration of element matrices.
//!
//! Every element matrix of an affine P1 discretization is computed as the
//! contraction `A_ij = G^{mu nu} K^{ij}_{mu nu}` of a per-element geometry
//! tensor `G` with a mesh-independent analytic tensor `K`. The engine runs
//! these contractions in fixed-size element batches under a small space of
//! kernel variants (batch size, concurrent elements, interleaved stores,
//! unrolling) and a direct-quadrature oracle checks every result.
//!
//! Module map:
//!
//! - [`reference`]: reference simplices, quadrature tables, P1 tabulation.
//! - [`forms`]: analytic tensors for the Laplacian, elasticity and the
//!   weighted Laplacian.
//! - [`geometry`]: meshes, Jacobians, geometry tensors and batch packing.
//! - [`engine`]: kernel variants, batched contraction and the output layout.
//! - [`oracle`]: direct element integration used as ground truth.
//! - [`bench`]: timed runs, configuration sweeps and CSV/JSON records.

pub mod bench;
pub mod engine;
mod error;
pub mod forms;
pub mod geometry;
pub mod oracle;
pub mod reference;
mod scalar;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
