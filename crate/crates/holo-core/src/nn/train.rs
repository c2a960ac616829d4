//! Model construction and the Adam training loop.

use super::adam::Adam;
use super::checkpoint::{load_tensors, save_tensors, CheckpointMeta};
use super::dsn::{dsn_backward, dsn_forward_cached, DsnGrads, DsnParams};
use super::gtn::{GtnConfig, GtnGrads, GtnParams};
use super::layers::ConvGrad;
use super::loss::{bce_backward, bce_loss};
use super::tensor::Tensor;
use super::vnet::{
    decoder_backward, decoder_forward, encoder_backward, encoder_forward, VNet, VNetConfig,
};
use super::Scalar;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Expert,
    Generalist,
    Generalist3x,
    Dsn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Expert => "expert",
            ModelKind::Generalist => "generalist",
            ModelKind::Generalist3x => "generalist3x",
            ModelKind::Dsn => "dsn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(ModelKind::Expert),
            "generalist" => Ok(ModelKind::Generalist),
            "generalist3x" => Ok(ModelKind::Generalist3x),
            "dsn" => Ok(ModelKind::Dsn),
            other => Err(Error::Invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Weight initialization for [`ModelParams::init`].
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Xavier,
    /// Load three single-net checkpoints into the experts; the gating
    /// network is always Xavier-initialized.
    PretrainedExperts(Vec<PathBuf>),
}

/// Optimizer schedule. Adam moments are fixed at (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// L2 decay coefficient gamma; the effective loss is bce + gamma*|W|^2.
    pub l2_gamma: f64,
    pub iters: usize,
    pub seed: u64,
    /// Validate every this many iterations (0 = only at the end).
    pub val_every: usize,
}

impl TrainConfig {
    /// Published full-scale schedules per model kind.
    pub fn paper_preset(kind: ModelKind) -> Self {
        let (lr, batch, l2_gamma) = match kind {
            ModelKind::Dsn => (1e-5, 1, 1e-6),
            ModelKind::Expert => (1e-4, 4, 0.0),
            ModelKind::Generalist => (1e-5, 20, 0.0),
            ModelKind::Generalist3x => (1e-4, 1, 0.0),
        };
        Self {
            lr,
            batch,
            l2_gamma,
            iters: 0,
            seed: 0,
            val_every: 0,
        }
    }
}

/// One training example: input volume patch, matching hologram patch, and
/// binary label patch.
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub input: Tensor<T>,
    pub holo: Tensor<T>,
    pub label: Vec<u8>,
}

/// Trainable parameter sets for every model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<T> {
    Single { kind: ModelKind, net: VNet<T> },
    Dsn(DsnParams<T>),
}

/// Gradients matching [`ModelParams`].
pub struct ModelGrads<T> {
    pub nets: Vec<Vec<ConvGrad<T>>>,
    pub gtn: Option<GtnGrads<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    fn accumulate(&mut self, other: &ModelGrads<T>) {
        for (a, b) in self.nets.iter_mut().zip(other.nets.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                x.accumulate(y);
            }
        }
        if let (Some(a), Some(b)) = (self.gtn.as_mut(), other.gtn.as_ref()) {
            a.conv1.accumulate(&b.conv1);
            a.conv2.accumulate(&b.conv2);
            a.fc.accumulate(&b.fc);
        }
    }

    fn scale(&mut self, s: T) {
        for net in self.nets.iter_mut() {
            for g in net.iter_mut() {
                g.scale(s);
            }
        }
        if let Some(g) = self.gtn.as_mut() {
            g.conv1.scale(s);
            g.conv2.scale(s);
            g.fc.scale(s);
        }
    }

    fn flat(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for net in &self.nets {
            for g in net {
                out.push(g.dw.as_slice());
                out.push(g.db.as_slice());
            }
        }
        if let Some(g) = &self.gtn {
            for cg in [&g.conv1, &g.conv2, &g.fc] {
                out.push(cg.dw.as_slice());
                out.push(cg.db.as_slice());
            }
        }
        out
    }

    fn flat_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for net in self.nets.iter_mut() {
            for g in net.iter_mut() {
                out.push(&mut g.dw);
                out.push(&mut g.db);
            }
        }
        if let Some(g) = self.gtn.as_mut() {
            out.push(&mut g.conv1.dw);
            out.push(&mut g.conv1.db);
            out.push(&mut g.conv2.dw);
            out.push(&mut g.conv2.db);
            out.push(&mut g.fc.dw);
            out.push(&mut g.fc.db);
        }
        out
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Build fresh parameters. `gtn_patch` is only used by the synthesized
    /// model kind.
    pub fn init(
        kind: ModelKind,
        vcfg: &VNetConfig,
        gtn_patch: usize,
        mode: &InitMode,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            ModelKind::Dsn => {
                let experts: Vec<VNet<T>> = match mode {
                    InitMode::Xavier => (0..3).map(|_| VNet::init(vcfg, &mut rng)).collect(),
                    InitMode::PretrainedExperts(paths) => {
                        if paths.len() != 3 {
                            return Err(Error::Shape(format!(
                                "pretrained initialization needs 3 expert checkpoints, got {}",
                                paths.len()
                            )));
                        }
                        let mut experts = Vec::with_capacity(3);
                        for p in paths {
                            let loaded = ModelParams::<T>::load(p)?;
                            match loaded {
                                ModelParams::Single { net, .. } => {
                                    if net.cfg != *vcfg {
                                        return Err(Error::Shape(format!(
                                            "checkpoint {} layer table differs from requested config",
                                            p.display()
                                        )));
                                    }
                                    experts.push(net);
                                }
                                ModelParams::Dsn(_) => {
                                    return Err(Error::Shape(format!(
                                        "checkpoint {} is not a single-net checkpoint",
                                        p.display()
                                    )))
                                }
                            }
                        }
                        experts
                    }
                };
                let gtn = GtnParams::init(GtnConfig::new(gtn_patch)?, &mut rng);
                Ok(ModelParams::Dsn(DsnParams::new(experts, gtn)?))
            }
            kind => {
                if matches!(mode, InitMode::PretrainedExperts(_)) {
                    return Err(Error::Invalid(
                        "pretrained-expert initialization only applies to the synthesized model"
                            .into(),
                    ));
                }
                Ok(ModelParams::Single {
                    kind,
                    net: VNet::init(vcfg, &mut rng),
                })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Single { kind, .. } => *kind,
            ModelParams::Dsn(_) => ModelKind::Dsn,
        }
    }

    pub fn vnet_config(&self) -> &VNetConfig {
        match self {
            ModelParams::Single { net, .. } => &net.cfg,
            ModelParams::Dsn(d) => &d.experts[0].cfg,
        }
    }

    pub fn map<U: Scalar>(&self) -> ModelParams<U> {
        match self {
            ModelParams::Single { kind, net } => ModelParams::Single {
                kind: *kind,
                net: net.map(),
            },
            ModelParams::Dsn(d) => ModelParams::Dsn(d.map()),
        }
    }

    /// Probability map (and synthesis weights for the synthesized model).
    pub fn predict(&self, patch: &Tensor<T>, holo: &Tensor<T>) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        match self {
            ModelParams::Single { net, .. } => {
                let (prob, _) = net.forward(patch)?;
                Ok((prob, None))
            }
            ModelParams::Dsn(d) => {
                let (prob, alpha) = super::dsn::dsn_forward(d, patch, holo)?;
                Ok((prob, Some(alpha)))
            }
        }
    }

    fn zero_grads(&self) -> ModelGrads<T> {
        match self {
            ModelParams::Single { net, .. } => ModelGrads {
                nets: vec![net.layers.iter().map(ConvGrad::zeros_like).collect()],
                gtn: None,
            },
            ModelParams::Dsn(d) => ModelGrads {
                nets: d
                    .experts
                    .iter()
                    .map(|e| e.layers.iter().map(ConvGrad::zeros_like).collect())
                    .collect(),
                gtn: Some(GtnGrads {
                    conv1: ConvGrad::zeros_like(&d.gtn.conv1),
                    conv2: ConvGrad::zeros_like(&d.gtn.conv2),
                    fc: ConvGrad::zeros_like(&d.gtn.fc),
                }),
            },
        }
    }

    /// Flat list of parameter tensors in a canonical order.
    pub fn params_flat_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        match self {
            ModelParams::Single { net, .. } => {
                for l in net.layers.iter_mut() {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
            }
            ModelParams::Dsn(d) => {
                for e in d.experts.iter_mut() {
                    for l in e.layers.iter_mut() {
                        out.push(&mut l.w);
                        out.push(&mut l.b);
                    }
                }
                out.push(&mut d.gtn.conv1.w);
                out.push(&mut d.gtn.conv1.b);
                out.push(&mut d.gtn.conv2.w);
                out.push(&mut d.gtn.conv2.b);
                out.push(&mut d.gtn.fc.w);
                out.push(&mut d.gtn.fc.b);
            }
        }
        out
    }

    pub fn params_flat(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        match self {
            ModelParams::Single { net, .. } => {
                for l in net.layers.iter() {
                    out.push(l.w.as_slice());
                    out.push(l.b.as_slice());
                }
            }
            ModelParams::Dsn(d) => {
                for e in d.experts.iter() {
                    for l in e.layers.iter() {
                        out.push(l.w.as_slice());
                        out.push(l.b.as_slice());
                    }
                }
                out.push(d.gtn.conv1.w.as_slice());
                out.push(d.gtn.conv1.b.as_slice());
                out.push(d.gtn.conv2.w.as_slice());
                out.push(d.gtn.conv2.b.as_slice());
                out.push(d.gtn.fc.w.as_slice());
                out.push(d.gtn.fc.b.as_slice());
            }
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.params_flat()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let x = v.to_f64_c();
                x * x
            })
            .sum()
    }

    fn named_tensors(&self) -> Vec<(String, Vec<f32>)> {
        let to32 = |t: &[T]| t.iter().map(|v| v.to_f64_c() as f32).collect::<Vec<f32>>();
        let mut out = Vec::new();
        match self {
            ModelParams::Single { net, .. } => {
                for (i, l) in net.layers.iter().enumerate() {
                    out.push((format!("vnet.l{i:02}.w"), to32(&l.w)));
                    out.push((format!("vnet.l{i:02}.b"), to32(&l.b)));
                }
            }
            ModelParams::Dsn(d) => {
                for (e, net) in d.experts.iter().enumerate() {
                    for (i, l) in net.layers.iter().enumerate() {
                        out.push((format!("expert{e}.l{i:02}.w"), to32(&l.w)));
                        out.push((format!("expert{e}.l{i:02}.b"), to32(&l.b)));
                    }
                }
                out.push(("gtn.conv1.w".into(), to32(&d.gtn.conv1.w)));
                out.push(("gtn.conv1.b".into(), to32(&d.gtn.conv1.b)));
                out.push(("gtn.conv2.w".into(), to32(&d.gtn.conv2.w)));
                out.push(("gtn.conv2.b".into(), to32(&d.gtn.conv2.b)));
                out.push(("gtn.fc.w".into(), to32(&d.gtn.fc.w)));
                out.push(("gtn.fc.b".into(), to32(&d.gtn.fc.b)));
            }
        }
        out
    }

    /// Save as f32 tensors with a JSON manifest.
    pub fn save(&self, path: &Path, iteration: usize, seed: u64, train_loss: f64, val_loss: Option<f64>) -> Result<()> {
        let meta = CheckpointMeta {
            model: self.kind().as_str().to_string(),
            layers: self.vnet_config().layers.clone(),
            gtn_patch: match self {
                ModelParams::Dsn(d) => Some(d.gtn.cfg.patch),
                _ => None,
            },
            iteration,
            seed,
            train_loss,
            val_loss,
        };
        save_tensors(path, &self.named_tensors(), &meta)
    }

    /// Load a checkpoint, verifying every tensor shape against the manifest's
    /// layer table.
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = load_tensors(path)?;
        let kind = ModelKind::parse(&meta.model)?;
        let vcfg = VNetConfig {
            layers: meta.layers.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params: ModelParams<T> = match kind {
            ModelKind::Dsn => {
                let patch = meta
                    .gtn_patch
                    .ok_or_else(|| Error::Shape("manifest missing gating patch size".into()))?;
                let experts = (0..3).map(|_| VNet::init(&vcfg, &mut rng)).collect();
                let gtn = GtnParams::init(GtnConfig::new(patch)?, &mut rng);
                ModelParams::Dsn(DsnParams::new(experts, gtn)?)
            }
            k => ModelParams::Single {
                kind: k,
                net: VNet::init(&vcfg, &mut rng),
            },
        };
        let expected = params.named_tensors();
        {
            let mut slots = params.params_flat_mut();
            for (slot, (name, _)) in slots.iter_mut().zip(expected.iter()) {
                let data = tensors.get(name).ok_or_else(|| {
                    Error::Shape(format!("checkpoint missing tensor `{name}`"))
                })?;
                if data.len() != slot.len() {
                    return Err(Error::Shape(format!(
                        "tensor `{name}` has {} values, expected {}",
                        data.len(),
                        slot.len()
                    )));
                }
                **slot = data.iter().map(|&v| T::from_f64_c(v as f64)).collect();
            }
        }
        Ok(params)
    }
}

/// One loss-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub bce: f64,
    pub l2: f64,
    pub total: f64,
}

pub struct TrainReport<T> {
    pub rows: Vec<LossRow>,
    pub val_rows: Vec<(usize, f64)>,
    pub best: ModelParams<T>,
    pub best_iter: usize,
    pub best_val: f64,
}

/// BCE and gradients for one example.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    item: &TrainItem<T>,
) -> Result<(T, ModelGrads<T>)> {
    match params {
        ModelParams::Single { net, .. } => {
            let mut enc_cache = Vec::with_capacity(10);
            let features = encoder_forward(net.encoder(), &item.input, Some(&mut enc_cache))?;
            let mut dec_cache = Vec::with_capacity(9);
            let logits = decoder_forward(net.decoder(), &features, Some(&mut dec_cache))?;
            let prob = super::layers::sigmoid(&logits);
            let bce = bce_loss(&prob, &item.label)?;
            let dprob = bce_backward(&prob, &item.label)?;
            let mut dlogits = dprob;
            for (g, &p) in dlogits.data.iter_mut().zip(prob.data.iter()) {
                *g = *g * p * (T::one() - p);
            }
            let (dfeatures, dec_grads) =
                decoder_backward(net.decoder(), &dec_cache, &features, &dlogits);
            let (_dx, enc_grads) = encoder_backward(net.encoder(), &enc_cache, &dfeatures);
            let mut all = enc_grads;
            all.extend(dec_grads);
            Ok((
                bce,
                ModelGrads {
                    nets: vec![all],
                    gtn: None,
                },
            ))
        }
        ModelParams::Dsn(d) => {
            let cache = dsn_forward_cached(d, &item.input, &item.holo)?;
            let bce = bce_loss(&cache.prob, &item.label)?;
            let dprob = bce_backward(&cache.prob, &item.label)?;
            let DsnGrads { experts, gtn } = dsn_backward(d, &cache, &dprob);
            Ok((
                bce,
                ModelGrads {
                    nets: experts,
                    gtn: Some(gtn),
                },
            ))
        }
    }
}

/// Mean BCE over a set (forward only).
pub fn eval_bce<T: Scalar>(params: &ModelParams<T>, set: &[TrainItem<T>]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    let mut acc = 0.0;
    for item in set {
        let (prob, _) = params.predict(&item.input, &item.holo)?;
        acc += bce_loss(&prob, &item.label)?.to_f64_c();
    }
    Ok(acc / set.len() as f64)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Adam training with optional L2 decay and validation-loss model selection.
/// Deterministic for a fixed seed.
pub fn train<T: Scalar>(
    params: &mut ModelParams<T>,
    train_set: &[TrainItem<T>],
    val_set: &[TrainItem<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if cfg.batch == 0 || cfg.iters == 0 {
        return Err(Error::Invalid("batch and iters must be positive".into()));
    }
    let mut opt: Adam<T> = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = shuffled(train_set.len(), &mut rng);
    let mut cursor = 0usize;
    let mut rows = Vec::with_capacity(cfg.iters);
    let mut val_rows = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;
    let gamma = cfg.l2_gamma;

    for iter in 0..cfg.iters {
        let mut grads = params.zero_grads();
        let mut bce_acc = 0.0f64;
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                order = shuffled(train_set.len(), &mut rng);
                cursor = 0;
            }
            let item = &train_set[order[cursor]];
            cursor += 1;
            let (bce, g) = loss_and_grads(params, item)?;
            bce_acc += bce.to_f64_c();
            grads.accumulate(&g);
        }
        let bce_mean = bce_acc / cfg.batch as f64;
        if !bce_mean.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {bce_mean} at iteration {iter}"
            )));
        }
        grads.scale(T::from_f64_c(1.0 / cfg.batch as f64));

        let l2 = gamma * params.squared_norm();
        if gamma > 0.0 {
            let two_gamma = T::from_f64_c(2.0 * gamma);
            let p_flat = params.params_flat();
            let mut g_flat = grads.flat_mut();
            for (g, p) in g_flat.iter_mut().zip(p_flat.iter()) {
                for (gv, &pv) in g.iter_mut().zip(p.iter()) {
                    *gv = *gv + two_gamma * pv;
                }
            }
        }
        rows.push(LossRow {
            iter,
            bce: bce_mean,
            l2,
            total: bce_mean + l2,
        });

        {
            let g_flat = grads.flat();
            let mut p_flat = params.params_flat_mut();
            let mut p_slices: Vec<&mut [T]> = p_flat.iter_mut().map(|v| v.as_mut_slice()).collect();
            opt.step(&mut p_slices, &g_flat);
        }

        let validate_now = !val_set.is_empty()
            && (iter + 1 == cfg.iters || (cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0));
        if validate_now {
            let v = eval_bce(params, val_set)?;
            val_rows.push((iter, v));
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, iter, params.clone()));
            }
        }
    }

    let (best_val, best_iter, best) = match best {
        Some((v, i, p)) => (v, i, p),
        None => (f64::NAN, cfg.iters - 1, params.clone()),
    };
    Ok(TrainReport {
        rows,
        val_rows,
        best,
        best_iter,
        best_val,
    })
}

/// Write a loss log as CSV: iteration, bce, l2, total.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::from("iteration,bce,l2,total\n");
    for r in rows {
        out.push_str(&format!("{},{:.9},{:.9e},{:.9}\n", r.iter, r.bce, r.l2, r.total));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic_set(n: usize, seed: u64) -> Vec<TrainItem<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let d = 8;
                let hw = 16;
                let mut input = Tensor::zeros(1, d, hw, hw);
                let mut label = vec![0u8; d * hw * hw];
                // a bright 2x2x2 blob the net can learn to find
                let cz = rng.gen_range(1..d - 2);
                let cy = rng.gen_range(1..hw - 2);
                let cx = rng.gen_range(1..hw - 2);
                for v in input.data.iter_mut() {
                    *v = 0.1 * (rng.gen::<f32>() - 0.5);
                }
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((cz + dz) * hw + cy + dy) * hw + cx + dx;
                            input.data[i] += 2.0;
                            label[i] = 1;
                        }
                    }
                }
                let holo = Tensor {
                    c: 1,
                    d: 1,
                    h: hw,
                    w: hw,
                    data: (0..hw * hw).map(|_| rng.gen::<f32>() - 0.5).collect(),
                };
                TrainItem { input, holo, label }
            })
            .collect()
    }

    #[test]
    fn paper_presets_match_published_schedules() {
        let dsn = TrainConfig::paper_preset(ModelKind::Dsn);
        assert_eq!((dsn.lr, dsn.batch, dsn.l2_gamma), (1e-5, 1, 1e-6));
        let e = TrainConfig::paper_preset(ModelKind::Expert);
        assert_eq!((e.lr, e.batch, e.l2_gamma), (1e-4, 4, 0.0));
        let g = TrainConfig::paper_preset(ModelKind::Generalist);
        assert_eq!((g.lr, g.batch, g.l2_gamma), (1e-5, 20, 0.0));
        let g3 = TrainConfig::paper_preset(ModelKind::Generalist3x);
        assert_eq!((g3.lr, g3.batch, g3.l2_gamma), (1e-4, 1, 0.0));
    }

    #[test]
    fn tiny_expert_halves_its_training_loss() {
        let set = synthetic_set(20, 1);
        let mut params: ModelParams<f32> = ModelParams::init(
            ModelKind::Expert,
            &VNetConfig::desk(),
            16,
            &InitMode::Xavier,
            7,
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            batch: 2,
            l2_gamma: 0.0,
            iters: 200,
            seed: 3,
            val_every: 0,
        };
        let report = train(&mut params, &set, &[], &cfg).unwrap();
        let initial = report.rows[0].bce;
        let final_ = report.rows.last().unwrap().bce;
        assert!(
            final_ < 0.5 * initial,
            "loss did not halve: {initial} -> {final_}"
        );
    }

    #[test]
    fn weight_decay_shrinks_parameter_norm() {
        let set = synthetic_set(8, 2);
        let make = || {
            ModelParams::<f32>::init(
                ModelKind::Expert,
                &VNetConfig::desk(),
                16,
                &InitMode::Xavier,
                11,
            )
            .unwrap()
        };
        let cfg0 = TrainConfig {
            lr: 1e-3,
            batch: 1,
            l2_gamma: 0.0,
            iters: 200,
            seed: 5,
            val_every: 0,
        };
        let mut with_decay_cfg = cfg0.clone();
        with_decay_cfg.l2_gamma = 1e-3;

        let mut a = make();
        let ra = train(&mut a, &set, &[], &cfg0).unwrap();
        let mut b = make();
        let rb = train(&mut b, &set, &[], &with_decay_cfg).unwrap();

        assert!(b.squared_norm() < a.squared_norm());
        // loss logs must differ
        assert_ne!(
            ra.rows.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>(),
            rb.rows.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let set = synthetic_set(6, 3);
        let cfg = TrainConfig {
            lr: 1e-3,
            batch: 2,
            l2_gamma: 1e-6,
            iters: 20,
            seed: 9,
            val_every: 0,
        };
        let run = || {
            let mut p = ModelParams::<f32>::init(
                ModelKind::Expert,
                &VNetConfig::desk(),
                16,
                &InitMode::Xavier,
                13,
            )
            .unwrap();
            train(&mut p, &set, &[], &cfg).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_input_aborts_with_numerical_error() {
        let mut set = synthetic_set(2, 4);
        set[0].input.data[0] = f32::NAN;
        let mut params = ModelParams::<f32>::init(
            ModelKind::Expert,
            &VNetConfig::desk(),
            16,
            &InitMode::Xavier,
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            batch: 2,
            l2_gamma: 0.0,
            iters: 5,
            seed: 1,
            val_every: 0,
        };
        assert!(matches!(
            train(&mut params, &set, &[], &cfg),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_and_pretrained_init() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = VNetConfig::desk();
        let mut paths = Vec::new();
        for seed in 0..3u64 {
            let p = ModelParams::<f32>::init(ModelKind::Expert, &cfg, 16, &InitMode::Xavier, seed)
                .unwrap();
            let path = dir.path().join(format!("expert{seed}.hprm"));
            p.save(&path, 100, seed, 0.1, Some(0.2)).unwrap();
            let back = ModelParams::<f32>::load(&path).unwrap();
            assert_eq!(back, p);
            paths.push(path);
        }

        let dsn = ModelParams::<f32>::init(
            ModelKind::Dsn,
            &cfg,
            16,
            &InitMode::PretrainedExperts(paths.clone()),
            99,
        )
        .unwrap();
        match &dsn {
            ModelParams::Dsn(d) => {
                let first = ModelParams::<f32>::load(&paths[0]).unwrap();
                if let ModelParams::Single { net, .. } = first {
                    assert_eq!(d.experts[0], net);
                }
            }
            _ => panic!("expected synthesized model"),
        }

        // two checkpoints are a shape error
        assert!(matches!(
            ModelParams::<f32>::init(
                ModelKind::Dsn,
                &cfg,
                16,
                &InitMode::PretrainedExperts(paths[..2].to_vec()),
                0,
            ),
            Err(Error::Shape(_))
        ));
    }
}
