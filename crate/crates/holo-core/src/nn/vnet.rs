//! 3D V-net: 4-stage encoder/decoder with additive skip connections.
//!
//! Nineteen layers: two full-resolution convolutions, then four
//! (stride-2 down, convolution) stages into the bottleneck, mirrored by four
//! (transposed up, convolution) stages and a 1^3 output convolution. Hidden
//! activations are ReLU; the output passes through a sigmoid. Odd axes are
//! padded to even before downsampling and transposed outputs are cropped back
//! to the recorded encoder dims, so a 128x128x100 patch bottlenecks at 8x8x7.

use super::layers::{
    conv3d_backward, conv3d_forward, crop_to, pad_end, pad_same1, relu, relu_backward, sigmoid,
    unpad_same1, Conv3d, ConvGrad,
};
use super::tensor::{add, Tensor};
use super::Scalar;
use crate::{Error, Result};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayerRole {
    Conv,
    Down,
    Up,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub role: LayerRole,
    pub k: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

/// Layer table of one V-net.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VNetConfig {
    pub layers: Vec<LayerSpec>,
}

/// Parameter counting conventions.
///
/// `Standard` charges `k^3*cin*cout` weights plus one bias per output
/// channel (what the runtime actually stores). `PerInputBias` charges
/// `(k^3+1)*cin*cout`, i.e. one bias per input-output channel pair; provided
/// for cross-checking layer tables that total with that convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountConvention {
    Standard,
    PerInputBias,
}

impl VNetConfig {
    /// Build the 19-layer table from the five encoder channel widths.
    pub fn from_channels(ch: [usize; 5]) -> Self {
        let mut layers = Vec::with_capacity(19);
        let conv = |cin, cout| LayerSpec {
            role: LayerRole::Conv,
            k: [3, 3, 3],
            cin,
            cout,
        };
        let down = |cin, cout| LayerSpec {
            role: LayerRole::Down,
            k: [2, 2, 2],
            cin,
            cout,
        };
        let up = |cin, cout| LayerSpec {
            role: LayerRole::Up,
            k: [2, 2, 2],
            cin,
            cout,
        };
        layers.push(conv(1, ch[0]));
        layers.push(conv(ch[0], ch[0]));
        for s in 0..4 {
            layers.push(down(ch[s], ch[s + 1]));
            layers.push(conv(ch[s + 1], ch[s + 1]));
        }
        for s in (0..4).rev() {
            layers.push(up(ch[s + 1], ch[s]));
            layers.push(conv(ch[s], ch[s]));
        }
        layers.push(LayerSpec {
            role: LayerRole::Output,
            k: [1, 1, 1],
            cin: ch[0],
            cout: 1,
        });
        Self { layers }
    }

    /// Full-scale expert/generalist widths.
    pub fn paper() -> Self {
        Self::from_channels([16, 32, 64, 128, 256])
    }

    /// Small widths for fast CPU experiments and tests.
    pub fn desk() -> Self {
        Self::from_channels([2, 4, 8, 16, 32])
    }

    /// Full-scale triple-width generalist. Note: the output layer is listed
    /// with 16 input channels; this preset reproduces that layer table
    /// verbatim and is intended for parameter counting, not for running.
    pub fn generalist3x_table() -> Self {
        let mut cfg = Self::from_channels([28, 56, 112, 224, 448]);
        cfg.layers[18].cin = 16;
        cfg
    }

    /// Runnable triple-width desk config.
    pub fn desk_3x() -> Self {
        Self::from_channels([4, 7, 14, 28, 56])
    }

    pub fn encoder_layers(&self) -> &[LayerSpec] {
        &self.layers[..10]
    }

    pub fn decoder_layers(&self) -> &[LayerSpec] {
        &self.layers[10..]
    }

    /// Per-layer parameter counts under the given convention.
    pub fn count_params_per_layer(&self, conv: CountConvention) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| {
                let kvol = l.k[0] * l.k[1] * l.k[2];
                match conv {
                    CountConvention::Standard => kvol * l.cin * l.cout + l.cout,
                    CountConvention::PerInputBias => (kvol + 1) * l.cin * l.cout,
                }
            })
            .collect()
    }

    pub fn count_params(&self, conv: CountConvention) -> usize {
        self.count_params_per_layer(conv).iter().sum()
    }
}

/// One V-net's parameters. Layers 0..10 are the encoder, 10..19 the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VNet<T> {
    pub cfg: VNetConfig,
    pub layers: Vec<Conv3d<T>>,
}

pub(crate) fn xavier_fill<T: Scalar>(
    w: &mut [T],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    for v in w.iter_mut() {
        *v = T::from_f64_c(dist.sample(rng));
    }
}

impl<T: Scalar> VNet<T> {
    /// Xavier-uniform weights, zero biases.
    pub fn init(cfg: &VNetConfig, rng: &mut impl Rng) -> Self {
        let layers = cfg
            .layers
            .iter()
            .map(|spec| {
                let transposed = spec.role == LayerRole::Up;
                let stride = match spec.role {
                    LayerRole::Conv | LayerRole::Output => 1,
                    LayerRole::Down | LayerRole::Up => 2,
                };
                let mut l = Conv3d::zeros(spec.cin, spec.cout, spec.k, stride, transposed);
                let kvol = l.kernel_volume();
                xavier_fill(&mut l.w, spec.cin * kvol, spec.cout * kvol, rng);
                l
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            layers,
        }
    }

    pub fn encoder(&self) -> &[Conv3d<T>] {
        &self.layers[..10]
    }

    pub fn decoder(&self) -> &[Conv3d<T>] {
        &self.layers[10..]
    }

    pub fn map<U: Scalar>(&self) -> VNet<U> {
        VNet {
            cfg: self.cfg.clone(),
            layers: self.layers.iter().map(|l| l.map()).collect(),
        }
    }

    /// Forward pass without caches: probability map plus the multi-scale
    /// feature set.
    pub fn forward(&self, patch: &Tensor<T>) -> Result<(Tensor<T>, FeatureSet<T>)> {
        let features = encoder_forward(self.encoder(), patch, None)?;
        let logits = decoder_forward(self.decoder(), &features, None)?;
        Ok((sigmoid(&logits), features))
    }
}

/// Multi-scale encoder features: skip scales 0..4 plus the bottleneck
/// latent at index 4.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    pub scales: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn shapes(&self) -> Vec<(usize, [usize; 3])> {
        self.scales.iter().map(|t| (t.c, t.spatial())).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scales: self
                .scales
                .iter()
                .map(|t| Tensor::zeros(t.c, t.d, t.h, t.w))
                .collect(),
        }
    }
}

/// Per-layer activation cache recorded during a forward pass.
pub struct LayerCache<T> {
    /// Tensor actually fed to the convolution (after padding).
    pub conv_in: Tensor<T>,
    /// Layer output after crop and activation.
    pub out: Tensor<T>,
    /// Input dims before padding (encoder) / conv output dims before crop
    /// (decoder up layers).
    pub dims: [usize; 3],
}

fn even_pad(dims: [usize; 3]) -> [usize; 3] {
    [dims[0] % 2, dims[1] % 2, dims[2] % 2]
}

/// Run the ten encoder layers. Returns the feature set; fills `cache` when
/// training.
pub fn encoder_forward<T: Scalar>(
    enc: &[Conv3d<T>],
    patch: &Tensor<T>,
    mut cache: Option<&mut Vec<LayerCache<T>>>,
) -> Result<FeatureSet<T>> {
    if enc.len() != 10 {
        return Err(Error::Shape(format!("encoder needs 10 layers, got {}", enc.len())));
    }
    if patch.c != enc[0].ci {
        return Err(Error::Shape(format!(
            "encoder expects {} input channels, got {}",
            enc[0].ci, patch.c
        )));
    }
    let mut scales = Vec::with_capacity(5);
    let mut x = patch.clone();
    for (i, layer) in enc.iter().enumerate() {
        let dims = x.spatial();
        let conv_in = if layer.stride == 1 {
            pad_same1(&x)
        } else {
            pad_end(&x, even_pad(dims))
        };
        let mut y = conv3d_forward(layer, &conv_in);
        relu(&mut y);
        if let Some(c) = cache.as_deref_mut() {
            c.push(LayerCache {
                conv_in,
                out: y.clone(),
                dims,
            });
        }
        if i % 2 == 1 {
            scales.push(y.clone());
        }
        x = y;
    }
    Ok(FeatureSet { scales })
}

/// Back-propagate feature-set gradients through the encoder.
pub fn encoder_backward<T: Scalar>(
    enc: &[Conv3d<T>],
    cache: &[LayerCache<T>],
    dfeatures: &FeatureSet<T>,
) -> (Tensor<T>, Vec<ConvGrad<T>>) {
    let mut grads: Vec<Option<ConvGrad<T>>> = (0..10).map(|_| None).collect();
    let mut g = Tensor::zeros(
        dfeatures.scales[4].c,
        dfeatures.scales[4].d,
        dfeatures.scales[4].h,
        dfeatures.scales[4].w,
    );
    for i in (0..10).rev() {
        if i % 2 == 1 {
            let k = (i - 1) / 2;
            for (gv, &dv) in g.data.iter_mut().zip(dfeatures.scales[k].data.iter()) {
                *gv = *gv + dv;
            }
        }
        relu_backward(&mut g, &cache[i].out);
        let (dpad, grad) = conv3d_backward(&enc[i], &cache[i].conv_in, &g);
        grads[i] = Some(grad);
        g = if enc[i].stride == 1 {
            unpad_same1(&dpad)
        } else {
            crop_to(&dpad, cache[i].dims)
        };
    }
    (g, grads.into_iter().map(|g| g.unwrap()).collect())
}

/// Run the nine decoder layers on a feature set. Returns logits (1 channel);
/// fills `cache` when training.
pub fn decoder_forward<T: Scalar>(
    dec: &[Conv3d<T>],
    features: &FeatureSet<T>,
    mut cache: Option<&mut Vec<LayerCache<T>>>,
) -> Result<Tensor<T>> {
    if dec.len() != 9 {
        return Err(Error::Shape(format!("decoder needs 9 layers, got {}", dec.len())));
    }
    if features.scales.len() != 5 {
        return Err(Error::Shape("feature set needs 5 scales".into()));
    }
    let mut x = features.scales[4].clone();
    for u in 0..4 {
        let skip = &features.scales[3 - u];
        let up = &dec[2 * u];
        if up.ci != x.c {
            return Err(Error::Shape(format!(
                "up layer {u} expects {} channels, got {}",
                up.ci, x.c
            )));
        }
        let full = conv3d_forward(up, &x);
        let full_dims = full.spatial();
        let mut y = crop_to(&full, skip.spatial());
        relu(&mut y);
        if let Some(c) = cache.as_deref_mut() {
            c.push(LayerCache {
                conv_in: x.clone(),
                out: y.clone(),
                dims: full_dims,
            });
        }
        let z = add(&y, skip)?;
        let conv_in = pad_same1(&z);
        let mut w = conv3d_forward(&dec[2 * u + 1], &conv_in);
        relu(&mut w);
        if let Some(c) = cache.as_deref_mut() {
            c.push(LayerCache {
                conv_in,
                out: w.clone(),
                dims: z.spatial(),
            });
        }
        x = w;
    }
    let logits = conv3d_forward(&dec[8], &x);
    if let Some(c) = cache.as_deref_mut() {
        c.push(LayerCache {
            conv_in: x,
            out: logits.clone(),
            dims: logits.spatial(),
        });
    }
    Ok(logits)
}

/// Back-propagate a logits gradient through the decoder. Returns the
/// gradient with respect to every feature scale plus parameter gradients.
pub fn decoder_backward<T: Scalar>(
    dec: &[Conv3d<T>],
    cache: &[LayerCache<T>],
    features: &FeatureSet<T>,
    dlogits: &Tensor<T>,
) -> (FeatureSet<T>, Vec<ConvGrad<T>>) {
    let mut grads: Vec<Option<ConvGrad<T>>> = (0..9).map(|_| None).collect();
    let mut dfeatures = features.zeros_like();

    // output convolution (no activation)
    let (mut g, grad) = conv3d_backward(&dec[8], &cache[8].conv_in, dlogits);
    grads[8] = Some(grad);

    for u in (0..4).rev() {
        // conv layer 2u+1: relu -> conv -> unpad
        let ci = 2 * u + 1;
        relu_backward(&mut g, &cache[ci].out);
        let (dpad, grad) = conv3d_backward(&dec[ci], &cache[ci].conv_in, &g);
        grads[ci] = Some(grad);
        let dz = unpad_same1(&dpad);

        // skip add: gradient flows into the feature scale and the up path
        let k = 3 - u;
        for (fv, &dv) in dfeatures.scales[k].data.iter_mut().zip(dz.data.iter()) {
            *fv = *fv + dv;
        }

        // up layer 2u: relu -> pad back to conv-out dims -> transposed conv
        let ui = 2 * u;
        let mut dy = dz;
        relu_backward(&mut dy, &cache[ui].out);
        let full = cache[ui].dims;
        let cur = dy.spatial();
        let dfull = pad_end(&dy, [full[0] - cur[0], full[1] - cur[1], full[2] - cur[2]]);
        let (dx, grad) = conv3d_backward(&dec[ui], &cache[ui].conv_in, &dfull);
        grads[ui] = Some(grad);
        g = dx;
    }

    // remaining gradient enters through the bottleneck latent
    for (fv, &dv) in dfeatures.scales[4].data.iter_mut().zip(g.data.iter()) {
        *fv = *fv + dv;
    }
    (dfeatures, grads.into_iter().map(|g| g.unwrap()).collect())
}
