//! Reconstruction of sparsely observed 3D property fields.
//!
//! Given a regular grid in which only a few full vertical columns
//! ("wells") are observed, this crate fills in the rest two ways and
//! lets you compare them:
//!
//! * **Low-rank tensor completion** ([`completion`]): ADMM over the
//!   three mode unfoldings with singular-value thresholding, either
//!   plain ([`completion::complete_plain`]) or with a
//!   graph-Laplacian smoothness penalty along each axis
//!   ([`completion::complete_smoothed`]).
//! * **Ordinary kriging** ([`kriging`]): the classical geostatistical
//!   baseline — variogram fitting, anisotropic neighbor search, and
//!   per-cell weight solves.
//!
//! Support modules: [`tensor`] (dense 3D arrays, unfold/fold,
//! masks, error metrics), [`linalg`] (SVD, thresholding, tridiagonal
//! solvers), [`geodata`] (grid file I/O, well sampling,
//! normalization, slice images), [`synthetic`] (seeded test fields),
//! and [`harness`] (seeded multi-run benchmarks, grid searches, and
//! report rendering).
//!
//! Reconstruction quality is reported as relative squared error
//! ([`tensor::rse`]) over the *unobserved* cells only; observed cells
//! pass through every solver bit-exactly.
//!
//! # Example
//!
//! ```
//! use geofill::completion::{complete_smoothed, AdmmParams};
//! use geofill::synthetic;
//! use geofill::tensor::{project, rse, Dims3};
//!
//! // a low-rank field, 12% of cells observed
//! let dims = Dims3::new(16, 14, 6)?;
//! let truth = synthetic::tucker(dims, [2, 2, 2], 7);
//! let mask = synthetic::sample_cells_uniform(dims, dims.len() / 8, 1)?;
//! let observed = project(&truth, &mask)?;
//!
//! let params = AdmmParams { max_iters: 200, ..AdmmParams::default() };
//! let (filled, trace) = complete_smoothed(&observed, &mask, &params)?;
//!
//! let err = rse(&filled, &truth, &mask)?;
//! assert!(err < 0.3, "rse {err} after {} iterations", trace.len());
//! # Ok::<(), geofill::Error>(())
//! ```

pub mod completion;
pub mod error;
pub mod geodata;
pub mod harness;
pub mod kriging;
pub mod linalg;
pub mod synthetic;
pub mod tensor;

pub use completion::{complete_plain, complete_smoothed, AdmmParams, ConvergenceTrace};
pub use error::{Error, Result};
pub use geodata::{
    load_spe10_porosity, sample_wells, save_field_ascii, spe10_dims, WellPlan, SPE10_CELL_FT,
};
pub use harness::{run_experiment, DataSource, ExperimentConfig, Method};
pub use kriging::{
    fit_variogram, ordinary_krige, SamplePoint, SearchEllipsoid, VariogramKind, VariogramModel,
};
pub use tensor::{rse, Dims3, Field3, Mask3};
