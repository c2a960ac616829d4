//! Dynamic synthesis of three expert V-nets under gating weights.
//!
//! The gating network turns the hologram patch into weights alpha on the
//! 3-simplex. Encoder features are mixed per scale, `F_s = sum_i alpha_i F_i`,
//! and the decoder runs with parameters `D_s = sum_i alpha_i D_i`, so every
//! synthesized decoder weight and bias is the alpha-combination of the
//! corresponding expert parameters. Gradients flow into the gating network
//! through both synthesis paths.

use super::gtn::{GtnCache, GtnGrads, GtnParams, GTN_EXPERTS};
use super::layers::{sigmoid, Conv3d, ConvGrad};
use super::tensor::{axpy, dot, Tensor};
use super::vnet::{
    decoder_backward, decoder_forward, encoder_backward, encoder_forward, FeatureSet, LayerCache,
    VNet,
};
use super::Scalar;
use crate::{Error, Result};

/// Three experts sharing one layer table, plus the gating network.
#[derive(Debug, Clone, PartialEq)]
pub struct DsnParams<T> {
    pub experts: Vec<VNet<T>>,
    pub gtn: GtnParams<T>,
}

impl<T: Scalar> DsnParams<T> {
    pub fn new(experts: Vec<VNet<T>>, gtn: GtnParams<T>) -> Result<Self> {
        if experts.len() != GTN_EXPERTS {
            return Err(Error::Shape(format!(
                "dynamic synthesis needs exactly {GTN_EXPERTS} experts, got {}",
                experts.len()
            )));
        }
        let cfg = &experts[0].cfg;
        if experts.iter().any(|e| &e.cfg != cfg) {
            return Err(Error::Shape("experts must share one layer table".into()));
        }
        Ok(Self { experts, gtn })
    }

    pub fn map<U: Scalar>(&self) -> DsnParams<U> {
        DsnParams {
            experts: self.experts.iter().map(|e| e.map()).collect(),
            gtn: self.gtn.map(),
        }
    }
}

/// Per-scale convex combination of expert feature sets.
pub fn synthesize_features<T: Scalar>(
    features: &[&FeatureSet<T>],
    alpha: &[T],
) -> Result<FeatureSet<T>> {
    if features.len() != alpha.len() || features.is_empty() {
        return Err(Error::Shape("feature sets and weights must pair up".into()));
    }
    for f in &features[1..] {
        if !features[0].same_shape(f) {
            return Err(Error::Shape("feature sets have different shapes".into()));
        }
    }
    let mut out = features[0].zeros_like();
    for (scale, o) in out.scales.iter_mut().enumerate() {
        for (f, &a) in features.iter().zip(alpha.iter()) {
            axpy(o, a, &f.scales[scale]);
        }
    }
    Ok(out)
}

/// Elementwise weighted sum of decoder parameter sets (weights and biases).
pub fn synthesize_decoder<T: Scalar>(
    decoders: &[&[Conv3d<T>]],
    alpha: &[T],
) -> Result<Vec<Conv3d<T>>> {
    if decoders.len() != alpha.len() || decoders.is_empty() {
        return Err(Error::Shape("decoders and weights must pair up".into()));
    }
    let first = decoders[0];
    for d in &decoders[1..] {
        if d.len() != first.len()
            || d.iter()
                .zip(first.iter())
                .any(|(a, b)| a.w.len() != b.w.len() || a.b.len() != b.b.len())
        {
            return Err(Error::Shape("decoder parameter shapes differ".into()));
        }
    }
    let mut out: Vec<Conv3d<T>> = first
        .iter()
        .map(|l| {
            let mut z = l.clone();
            z.w.iter_mut().for_each(|v| *v = T::zero());
            z.b.iter_mut().for_each(|v| *v = T::zero());
            z
        })
        .collect();
    for (dec, &a) in decoders.iter().zip(alpha.iter()) {
        for (o, l) in out.iter_mut().zip(dec.iter()) {
            for (ov, &lv) in o.w.iter_mut().zip(l.w.iter()) {
                *ov = *ov + a * lv;
            }
            for (ov, &lv) in o.b.iter_mut().zip(l.b.iter()) {
                *ov = *ov + a * lv;
            }
        }
    }
    Ok(out)
}

/// Activation caches of one synthesized forward pass.
pub struct DsnCache<T> {
    pub enc_caches: Vec<Vec<LayerCache<T>>>,
    pub features: Vec<FeatureSet<T>>,
    pub synth_features: FeatureSet<T>,
    pub synth_decoder: Vec<Conv3d<T>>,
    pub dec_cache: Vec<LayerCache<T>>,
    pub gtn_cache: GtnCache<T>,
    pub prob: Tensor<T>,
}

/// Gradients of everything trainable in the synthesized network.
pub struct DsnGrads<T> {
    /// Per expert: 10 encoder + 9 decoder layer gradients, in layer order.
    pub experts: Vec<Vec<ConvGrad<T>>>,
    pub gtn: GtnGrads<T>,
}

/// Forward pass with caches kept for the backward pass.
pub fn dsn_forward_cached<T: Scalar>(
    params: &DsnParams<T>,
    patch: &Tensor<T>,
    holo_patch: &Tensor<T>,
) -> Result<DsnCache<T>> {
    let gtn_cache = params.gtn.forward_cached(holo_patch)?;
    let alpha = gtn_cache.alpha.clone();

    let mut enc_caches = Vec::with_capacity(GTN_EXPERTS);
    let mut features = Vec::with_capacity(GTN_EXPERTS);
    for expert in &params.experts {
        let mut cache = Vec::with_capacity(10);
        let f = encoder_forward(expert.encoder(), patch, Some(&mut cache))?;
        enc_caches.push(cache);
        features.push(f);
    }
    let refs: Vec<&FeatureSet<T>> = features.iter().collect();
    let synth_features = synthesize_features(&refs, &alpha)?;
    let decoders: Vec<&[Conv3d<T>]> = params.experts.iter().map(|e| e.decoder()).collect();
    let synth_decoder = synthesize_decoder(&decoders, &alpha)?;
    let mut dec_cache = Vec::with_capacity(9);
    let logits = decoder_forward(&synth_decoder, &synth_features, Some(&mut dec_cache))?;
    let prob = sigmoid(&logits);
    Ok(DsnCache {
        enc_caches,
        features,
        synth_features,
        synth_decoder,
        dec_cache,
        gtn_cache,
        prob,
    })
}

/// Inference-style forward pass: probability map plus the synthesis weights.
pub fn dsn_forward<T: Scalar>(
    params: &DsnParams<T>,
    patch: &Tensor<T>,
    holo_patch: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let alpha = params.gtn.forward(holo_patch)?;
    let prob = dsn_forward_with_alpha(params, patch, &alpha)?;
    Ok((prob, alpha))
}

/// Forward pass with externally forced synthesis weights (diagnostics and
/// the synthesis-identity checks).
pub fn dsn_forward_with_alpha<T: Scalar>(
    params: &DsnParams<T>,
    patch: &Tensor<T>,
    alpha: &[T],
) -> Result<Tensor<T>> {
    if alpha.len() != GTN_EXPERTS {
        return Err(Error::Shape(format!(
            "expected {GTN_EXPERTS} synthesis weights, got {}",
            alpha.len()
        )));
    }
    let mut features = Vec::with_capacity(GTN_EXPERTS);
    for expert in &params.experts {
        features.push(encoder_forward(expert.encoder(), patch, None)?);
    }
    let refs: Vec<&FeatureSet<T>> = features.iter().collect();
    let synth_features = synthesize_features(&refs, alpha)?;
    let decoders: Vec<&[Conv3d<T>]> = params.experts.iter().map(|e| e.decoder()).collect();
    let synth_decoder = synthesize_decoder(&decoders, alpha)?;
    let logits = decoder_forward(&synth_decoder, &synth_features, None)?;
    Ok(sigmoid(&logits))
}

/// Backward pass from a gradient on the sigmoid output.
pub fn dsn_backward<T: Scalar>(
    params: &DsnParams<T>,
    cache: &DsnCache<T>,
    dprob: &Tensor<T>,
) -> DsnGrads<T> {
    // sigmoid
    let mut dlogits = dprob.clone();
    for (g, &p) in dlogits.data.iter_mut().zip(cache.prob.data.iter()) {
        *g = *g * p * (T::one() - p);
    }

    // synthesized decoder
    let (dsynth_features, dsynth_decoder) = decoder_backward(
        &cache.synth_decoder,
        &cache.dec_cache,
        &cache.synth_features,
        &dlogits,
    );

    let alpha = &cache.gtn_cache.alpha;
    let mut dalpha = vec![T::zero(); GTN_EXPERTS];
    let mut expert_grads: Vec<Vec<ConvGrad<T>>> = Vec::with_capacity(GTN_EXPERTS);

    for (i, expert) in params.experts.iter().enumerate() {
        // decoder parameters: dD_i = alpha_i * dD_s; dalpha_i += <dD_s, D_i>
        let mut dec_grads = Vec::with_capacity(9);
        for (g_s, l_i) in dsynth_decoder.iter().zip(expert.decoder().iter()) {
            let mut g = ConvGrad {
                dw: g_s.dw.clone(),
                db: g_s.db.clone(),
            };
            dalpha[i] = dalpha[i]
                + g_s
                    .dw
                    .iter()
                    .zip(l_i.w.iter())
                    .fold(T::zero(), |acc, (&gv, &wv)| acc + gv * wv)
                + g_s
                    .db
                    .iter()
                    .zip(l_i.b.iter())
                    .fold(T::zero(), |acc, (&gv, &bv)| acc + gv * bv);
            g.scale(alpha[i]);
            dec_grads.push(g);
        }

        // features: dF_i = alpha_i * dF_s; dalpha_i += <dF_s, F_i>
        let mut dfeat = dsynth_features.zeros_like();
        for (scale, df) in dfeat.scales.iter_mut().enumerate() {
            axpy(df, alpha[i], &dsynth_features.scales[scale]);
            dalpha[i] = dalpha[i]
                + dot(&dsynth_features.scales[scale], &cache.features[i].scales[scale]);
        }
        let (_dx, enc_grads) = encoder_backward(expert.encoder(), &cache.enc_caches[i], &dfeat);

        let mut all = enc_grads;
        all.extend(dec_grads);
        expert_grads.push(all);
    }

    let gtn = params.gtn.backward(&cache.gtn_cache, &dalpha);
    DsnGrads {
        experts: expert_grads,
        gtn,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gtn::GtnConfig;
    use crate::nn::vnet::VNetConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dsn(seed: u64) -> DsnParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = VNetConfig::desk();
        let experts = (0..3).map(|_| VNet::init(&cfg, &mut rng)).collect();
        let gtn = GtnParams::init(GtnConfig::new(32).unwrap(), &mut rng);
        DsnParams::new(experts, gtn).unwrap()
    }

    fn rand_patch(d: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor {
            c: 1,
            d,
            h,
            w,
            data: (0..d * h * w).map(|_| rng.gen::<f64>() - 0.5).collect(),
        }
    }

    #[test]
    fn two_experts_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = VNetConfig::desk();
        let experts: Vec<VNet<f64>> = (0..2).map(|_| VNet::init(&cfg, &mut rng)).collect();
        let gtn = GtnParams::init(GtnConfig::new(32).unwrap(), &mut rng);
        assert!(matches!(
            DsnParams::new(experts, gtn),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn basis_alpha_reduces_to_single_expert() {
        let dsn = tiny_dsn(1);
        let patch = rand_patch(12, 16, 16, 2);
        for i in 0..3 {
            let mut alpha = vec![0.0; 3];
            alpha[i] = 1.0;
            let via_dsn = dsn_forward_with_alpha(&dsn, &patch, &alpha).unwrap();
            let (direct, _) = dsn.experts[i].forward(&patch).unwrap();
            let mut max_rel = 0.0f64;
            for (a, b) in via_dsn.data.iter().zip(direct.data.iter()) {
                max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-12));
            }
            assert!(max_rel < 1e-12, "expert {i}: max rel {max_rel}");
        }
    }

    #[test]
    fn identical_experts_ignore_alpha() {
        let mut dsn = tiny_dsn(3);
        dsn.experts[1] = dsn.experts[0].clone();
        dsn.experts[2] = dsn.experts[0].clone();
        let patch = rand_patch(8, 16, 16, 4);
        let a = dsn_forward_with_alpha(&dsn, &patch, &[0.2, 0.5, 0.3]).unwrap();
        let (b, _) = dsn.experts[0].forward(&patch).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_strictly_probability() {
        let dsn = tiny_dsn(5);
        let patch = rand_patch(8, 32, 32, 6);
        let holo = rand_patch(1, 32, 32, 7);
        let (prob, alpha) = dsn_forward(&dsn, &patch, &holo).unwrap();
        assert!(prob.data.iter().all(|&v| v > 0.0 && v < 1.0));
        let s: f64 = alpha.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synthesize_features_identity_and_convexity() {
        let dsn = tiny_dsn(8);
        let patch = rand_patch(8, 16, 16, 9);
        let f: Vec<FeatureSet<f64>> = dsn
            .experts
            .iter()
            .map(|e| encoder_forward(e.encoder(), &patch, None).unwrap())
            .collect();
        let refs: Vec<&FeatureSet<f64>> = f.iter().collect();

        let s = synthesize_features(&refs, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.scales[0].data, f[0].scales[0].data);

        let s = synthesize_features(&refs, &[0.3, 0.3, 0.4]).unwrap();
        for scale in 0..5 {
            for (j, v) in s.scales[scale].data.iter().enumerate() {
                let lo = f.iter().map(|fs| fs.scales[scale].data[j]).fold(f64::INFINITY, f64::min);
                let hi = f
                    .iter()
                    .map(|fs| fs.scales[scale].data[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12, "outside hull");
            }
        }

        // linearity on scalar-scaled copies
        let same = synthesize_features(&[&f[0], &f[0], &f[0]], &[0.25, 0.5, 0.25]).unwrap();
        for (a, b) in same.scales[2].data.iter().zip(f[0].scales[2].data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesize_decoder_identity_and_cancellation() {
        let dsn = tiny_dsn(10);
        let decs: Vec<&[Conv3d<f64>]> = dsn.experts.iter().map(|e| e.decoder()).collect();
        let s = synthesize_decoder(&decs, &[0.0, 1.0, 0.0]).unwrap();
        for (a, b) in s.iter().zip(dsn.experts[1].decoder().iter()) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }

        // p and -p at weights (1/2, 1/2, 0) cancel to zero
        let mut neg = dsn.experts[0].clone();
        for l in neg.layers.iter_mut() {
            l.w.iter_mut().for_each(|v| *v = -*v);
            l.b.iter_mut().for_each(|v| *v = -*v);
        }
        let zero = synthesize_decoder(
            &[dsn.experts[0].decoder(), neg.decoder(), dsn.experts[2].decoder()],
            &[0.5, 0.5, 0.0],
        )
        .unwrap();
        for l in &zero {
            assert!(l.w.iter().all(|&v| v.abs() < 1e-15));
            assert!(l.b.iter().all(|&v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dsn = tiny_dsn(11);
        let other = VNet::<f64>::init(&VNetConfig::desk_3x(), &mut ChaCha8Rng::seed_from_u64(1));
        let decs = [dsn.experts[0].decoder(), dsn.experts[1].decoder(), other.decoder()];
        assert!(matches!(
            synthesize_decoder(&decs, &[0.4, 0.3, 0.3]),
            Err(Error::Shape(_))
        ));
    }
}
