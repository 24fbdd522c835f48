//! Cell-count preserving discretization of finite-rank determinantal point
//! process kernels.
//!
//! Given a kernel `K` on a ground space and a partition into cells, the
//! [`transference`] module builds a discrete kernel `Q` on an index set
//! split into blocks, one block per cell, such that the joint law of the
//! block counts under `Q` equals the joint law of the cell counts under `K`
//! and `Q` is unitarily equivalent to `K`. The [`countlaw`] module computes
//! those laws exactly, [`sampling`] draws exact samples, and
//! [`tail`] runs empirical conditioning and martingale diagnostics.

pub mod countlaw;
pub mod error;
pub mod ground;
pub mod kernel;
pub mod linalg;
pub mod sampling;
pub mod tail;
pub mod transference;

pub use countlaw::{joint_law, single_cell_law, tv_distance, CountLaw, Provenance};
pub use error::{Error, Result};
pub use ground::{Cell, FunctionRep, GroundSpace, Partition, Piece, Quadrature};
pub use kernel::{CompressedKernel, Point, SpectralKernel};
pub use sampling::{DppSampler, PointConfiguration, RngStream};
pub use tail::{LEnsembleTable, TailPlan, TailReport};
pub use transference::{TransferMap, TransferredKernel};

/// Library version embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
