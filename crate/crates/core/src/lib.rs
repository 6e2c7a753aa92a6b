//! Model-based synthetic MRI data generation.
//!
//! Quantitative tissue templates are pushed through an isochromat Bloch
//! simulation of the single-shot SE-MOLED sequence, with rigid in-plane
//! motion, transmit-field inhomogeneity, gradient fluctuation and noise, and
//! then through parallel-imaging forward operators to produce paired training
//! data.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at the
//! crate root fix the precision used by the CLI and the dataset writer.

pub mod bloch;
pub mod container;
pub mod dataset;
pub mod error;
pub mod fields;
pub mod grid;
pub mod metrics;
pub mod mriops;
pub mod num;
pub mod phantom;
pub mod physics;
pub mod presets;
pub mod randomize;
pub mod rng;
pub mod sequence;
pub mod validate;

pub use error::{ForgeError, Result};
pub use num::Real;

/// Working precision of the pipeline.
pub type Scalar = f64;
/// Precision arrays are stored in on disk.
pub type StoreScalar = f32;

pub type Grid = grid::Grid2<Scalar>;
pub type Image = grid::ComplexImage<Scalar>;
pub type Templates = phantom::ParametricTemplateSet<Scalar>;
pub type Spins = bloch::SpinGrid<Scalar>;
pub type KSpace = bloch::KSpaceData<Scalar>;
pub type B1 = fields::B1Map<Scalar>;
pub type NonIdeals = fields::NonIdealSet<Scalar>;
pub type Coils = mriops::CoilSet<Scalar>;
pub type Pair = mriops::SamplePair<Scalar>;

pub type GridF32 = grid::Grid2<f32>;
pub type ImageF32 = grid::ComplexImage<f32>;
pub type TemplatesF32 = phantom::ParametricTemplateSet<f32>;
