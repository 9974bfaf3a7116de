//! Label-free supervision for jointly training code generators and test
//! generators.
//!
//! The pieces, bottom up:
//!
//! - [`matrix`]: passing matrices, execution signatures, exact rank.
//! - [`selectors`]: MaxPass, CodeT and B4 consensus selection.
//! - [`rewards`]: coder/tester rewards, cosine curriculum, group-normalized
//!   advantages.
//! - [`calibration`]: grid recalibration of the B4 prior (Dynamic B4).
//! - [`execenv`]: synthetic world with latent ground truth, and an
//!   external-process executor.
//! - [`metrics`]: test accuracy and mutation score.
//! - [`coevo`]: rank pre-filtering and the alternating co-evolution loop
//!   over categorical policies, plus test-driven baselines.

pub mod calibration;
pub mod coevo;
pub mod execenv;
pub mod matrix;
pub mod metrics;
pub mod rewards;
pub mod seed;
pub mod selectors;
pub mod special;

pub use matrix::{build_matrix, gf2_rank, rank, signatures, PassingMatrix, RowSignature};
pub use selectors::{ConsensusSelection, PriorConfig, QuadrantCounts, Selector, SelectorKind};
