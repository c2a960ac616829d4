//! Gating network: maps a normalized hologram patch onto three simplex
//! weights.
//!
//! The patch is first decimated 4x by keeping every 4th pixel, then passes
//! two 3x3 convolution + ReLU + 2x2 maxpool stages (32 and 64 channels),
//! a fully connected layer and a softmax. For a 128x128 patch the internal
//! maps are 32x32 -> 16x16 -> 8x8 and the flattened vector has 8*8*64
//! entries.

use super::layers::{
    conv3d_backward, conv3d_forward, linear_backward, linear_forward, maxpool2, maxpool2_backward,
    pad_same_yx, relu, relu_backward, softmax, softmax_backward, subsample2d, subsample2d_backward,
    unpad_same_yx, Conv3d, ConvGrad, Linear,
};
use super::tensor::Tensor;
use super::vnet::xavier_fill;
use super::Scalar;
use crate::{Error, Result};
use rand::Rng;

pub const GTN_C1: usize = 32;
pub const GTN_C2: usize = 64;
pub const GTN_EXPERTS: usize = 3;
const DECIMATE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GtnConfig {
    /// Lateral size of the (square) hologram patch; must be divisible by 16.
    pub patch: usize,
}

impl GtnConfig {
    pub fn new(patch: usize) -> Result<Self> {
        if patch == 0 || patch % 16 != 0 {
            return Err(Error::Shape(format!(
                "gating patch must be a positive multiple of 16, got {patch}"
            )));
        }
        Ok(Self { patch })
    }

    /// Side of the feature map entering the fully connected layer.
    pub fn fc_side(&self) -> usize {
        self.patch / 16
    }

    pub fn fc_inputs(&self) -> usize {
        self.fc_side() * self.fc_side() * GTN_C2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtnParams<T> {
    pub cfg: GtnConfig,
    pub conv1: Conv3d<T>,
    pub conv2: Conv3d<T>,
    pub fc: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct GtnGrads<T> {
    pub conv1: ConvGrad<T>,
    pub conv2: ConvGrad<T>,
    pub fc: ConvGrad<T>,
}

pub struct GtnCache<T> {
    sub: Tensor<T>,
    conv1_in: Tensor<T>,
    act1: Tensor<T>,
    pool1_idx: Vec<u32>,
    pool1: Tensor<T>,
    conv2_in: Tensor<T>,
    act2: Tensor<T>,
    pool2_idx: Vec<u32>,
    pool2: Tensor<T>,
    pub alpha: Vec<T>,
}

impl<T: Scalar> GtnParams<T> {
    pub fn init(cfg: GtnConfig, rng: &mut impl Rng) -> Self {
        let mut conv1 = Conv3d::zeros(1, GTN_C1, [1, 3, 3], 1, false);
        xavier_fill(&mut conv1.w, 9, 9 * GTN_C1, rng);
        let mut conv2 = Conv3d::zeros(GTN_C1, GTN_C2, [1, 3, 3], 1, false);
        xavier_fill(&mut conv2.w, 9 * GTN_C1, 9 * GTN_C2, rng);
        let mut fc = Linear::zeros(cfg.fc_inputs(), GTN_EXPERTS);
        xavier_fill(&mut fc.w, cfg.fc_inputs(), GTN_EXPERTS, rng);
        Self {
            cfg,
            conv1,
            conv2,
            fc,
        }
    }

    pub fn map<U: Scalar>(&self) -> GtnParams<U> {
        GtnParams {
            cfg: self.cfg,
            conv1: self.conv1.map(),
            conv2: self.conv2.map(),
            fc: self.fc.map(),
        }
    }

    fn check_input(&self, holo: &Tensor<T>) -> Result<()> {
        if holo.c != 1 || holo.d != 1 || holo.h != self.cfg.patch || holo.w != self.cfg.patch {
            return Err(Error::Shape(format!(
                "gating input must be 1x1x{0}x{0}, got {1}x{2}x{3}x{4}",
                self.cfg.patch, holo.c, holo.d, holo.h, holo.w
            )));
        }
        Ok(())
    }

    /// Forward pass with activation cache (for training).
    pub fn forward_cached(&self, holo: &Tensor<T>) -> Result<GtnCache<T>> {
        self.check_input(holo)?;
        let sub = subsample2d(holo, DECIMATE);
        let conv1_in = pad_same_yx(&sub);
        let mut act1 = conv3d_forward(&self.conv1, &conv1_in);
        relu(&mut act1);
        let (pool1, pool1_idx) = maxpool2(&act1);
        let conv2_in = pad_same_yx(&pool1);
        let mut act2 = conv3d_forward(&self.conv2, &conv2_in);
        relu(&mut act2);
        let (pool2, pool2_idx) = maxpool2(&act2);
        let logits = linear_forward(&self.fc, &pool2.data);
        let alpha = softmax(&logits);
        Ok(GtnCache {
            sub,
            conv1_in,
            act1,
            pool1_idx,
            pool1,
            conv2_in,
            act2,
            pool2_idx,
            pool2,
            alpha,
        })
    }

    /// Synthesis weights for one hologram patch.
    pub fn forward(&self, holo: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_cached(holo)?.alpha)
    }

    /// Back-propagate a gradient on alpha through the whole gating network.
    pub fn backward(&self, cache: &GtnCache<T>, dalpha: &[T]) -> GtnGrads<T> {
        let dlogits = softmax_backward(&cache.alpha, dalpha);
        let (dflat, fc_grad) = linear_backward(&self.fc, &cache.pool2.data, &dlogits);
        let side2 = cache.pool2.h;
        let dpool2 = Tensor::from_data(GTN_C2, 1, side2, side2, dflat).expect("fc shape");
        let mut dact2 = maxpool2_backward(&dpool2, &cache.pool2_idx, (GTN_C2, cache.act2.h, cache.act2.w));
        relu_backward(&mut dact2, &cache.act2);
        let (dconv2_in, conv2_grad) = conv3d_backward(&self.conv2, &cache.conv2_in, &dact2);
        let dpool1 = unpad_same_yx(&dconv2_in);
        let mut dact1 = maxpool2_backward(&dpool1, &cache.pool1_idx, (GTN_C1, cache.act1.h, cache.act1.w));
        relu_backward(&mut dact1, &cache.act1);
        let (dconv1_in, conv1_grad) = conv3d_backward(&self.conv1, &cache.conv1_in, &dact1);
        let dsub = unpad_same_yx(&dconv1_in);
        // gradient to the hologram itself is discarded (input, not a parameter)
        let _ = subsample2d_backward(&dsub, DECIMATE, (1, self.cfg.patch, self.cfg.patch));
        GtnGrads {
            conv1: conv1_grad,
            conv2: conv2_grad,
            fc: fc_grad,
        }
    }
}
