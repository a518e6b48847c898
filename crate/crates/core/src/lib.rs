//! Strain-space model order reduction for hyperelastic RVE homogenisation.
//!
//! The crate provides the full pipeline: a periodic voxel RVE generator and
//! full-order FE solver (the snapshot oracle), randomized load-path sampling,
//! strain-space POD, three hyperreduced online models (ECM, E3C, EMSL), and a
//! benchmarking harness that compares them against the full-order solution.

pub mod bench;
pub mod config;
pub mod e3c;
pub mod ecm;
pub mod emsl;
pub mod error;
pub mod fem;
pub mod lbfgs;
pub mod material;
pub mod mesh;
pub mod pod;
pub mod rom;
pub mod sampling;
pub mod store;
pub mod voigt;

pub use error::{Error, Result};
pub use material::{Constitutive, CountingMaterial, Material, MaterialKind};
pub use voigt::{
    voigt_decode, voigt_encode, voigt_identity, voigt_index, Tensor3, VoigtMat9, VoigtVec9,
};
