//! Flow-aligned training for first-order unrolled MRI reconstruction.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of
//! the pipeline:
//!
//! * [`autodiff`]: a reverse-mode tape over dense real arrays plus AdamW.
//! * [`physics`]: centered unitary FFTs, equispaced column masks and the
//!   diagonal k-space sampling operator.
//! * [`flow`]: the cascade time schedule, parameter grounding, ideal and
//!   predicted velocities, the flow-aligned loss and the energy-based
//!   conditional velocity field.
//! * [`net`]: the K-cascade unrolled network and its regularizer.
//! * [`oracle`]: closed-form and RK4 references for the Gaussian-prior flow,
//!   used to check that a cascade is one forward Euler step of that flow.
//! * [`phantom`]: seeded ellipse phantoms and undersampled samples.
//! * [`metrics`], [`stats`]: PSNR, SSIM, SSIM loss and the unpaired t-test.
//! * [`train`]: training, evaluation and cascade-stability analysis.
//!
//! File formats, datasets on disk and the command line live in the `flat`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod array;
pub mod autodiff;
pub mod error;
pub mod flow;
pub mod grid;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod phantom;
pub mod physics;
pub mod rng;
pub mod stats;
pub mod train;

pub use array::RealArray;
pub use error::{Error, Result};
pub use grid::ComplexGrid;
pub use num_complex::Complex64;
