//! End-to-end toolkit for holographic 3D particle imaging.
//!
//! The crate covers the full synthetic pipeline: random particle fields
//! ([`particles`]), multiple-scattering hologram simulation with the split-step
//! beam-propagation method ([`wavesim`]), holographic backpropagation into a
//! coarse volume ([`backprop`]), normalization and patch extraction
//! ([`dataset`]), a from-scratch differentiable network stack with a
//! gating-controlled dynamic synthesis of three experts ([`nn`]), and 3D
//! localization scoring with depth-resolved Jaccard curves ([`eval`]).
//!
//! All physical quantities are in micrometres unless stated otherwise.

pub mod backprop;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod hvol;
pub mod nn;
pub mod par;
pub mod particles;
pub mod volume;
pub mod voxelize;
pub mod wavesim;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use volume::{BinaryVolume, ComplexVolume, Hologram, RealVolume};
