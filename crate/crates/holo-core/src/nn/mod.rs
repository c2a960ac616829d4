//! From-scratch differentiable network stack.
//!
//! Three expert V-net encoder/decoder pairs, a small gating network that maps
//! a hologram patch onto simplex weights, and the dynamic synthesis that
//! mixes expert feature maps and decoder parameters with those weights.
//! Every layer carries a hand-written backward pass; training uses Adam on
//! binary cross entropy with optional L2 decay.

pub mod adam;
pub mod checkpoint;
pub mod dsn;
pub mod gtn;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod tensor;
pub mod train;
pub mod vnet;

pub use adam::Adam;
pub use dsn::{synthesize_decoder, synthesize_features, DsnParams};
pub use gtn::{GtnConfig, GtnParams};
pub use loss::{bce_backward, bce_loss};
pub use tensor::Tensor;
pub use train::{InitMode, ModelKind, ModelParams, TrainConfig};
pub use vnet::{CountConvention, FeatureSet, LayerRole, VNet, VNetConfig};

/// Scalar type for network math; f32 for training, f64 for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64_c(v: f64) -> Self {
        Self::from(v).expect("scalar conversion")
    }
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
