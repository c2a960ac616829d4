//! Whole-volume inference by non-overlapping patch tiling.

use super::tensor::Tensor;
use super::train::ModelParams;
use super::Scalar;
use crate::dataset::{crop_offsets, crop_real, paste_real};
use crate::volume::RealVolume;
use crate::Result;

/// Synthesis weights recorded for one patch.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatchAlpha {
    pub ox: usize,
    pub oy: usize,
    pub alpha: [f64; 3],
}

/// Run the model over every non-overlapping lateral patch and stitch the
/// probability volume back together. `holo` must be the normalized hologram
/// on the same lateral grid.
pub fn predict_volume<T: Scalar>(
    params: &ModelParams<T>,
    input: &RealVolume,
    holo: &RealVolume,
    patch: usize,
) -> Result<(RealVolume, Vec<PatchAlpha>)> {
    let grid = input.grid;
    let mut prob = RealVolume::zeros(grid);
    let mut alphas = Vec::new();
    for (ox, oy) in crop_offsets(grid.nx, grid.ny, patch, 0)? {
        let vol_patch = crop_real(input, ox, oy, patch)?;
        let holo_patch = crop_real(holo, ox, oy, patch)?;
        let x: Tensor<T> = Tensor::from_volume(&vol_patch);
        let h: Tensor<T> = Tensor::from_volume(&holo_patch);
        let (p, alpha) = params.predict(&x, &h)?;
        let p_vol = p.into_volume(vol_patch.grid)?;
        paste_real(&mut prob, &p_vol, ox, oy)?;
        if let Some(a) = alpha {
            alphas.push(PatchAlpha {
                ox,
                oy,
                alpha: [
                    a[0].to_f64_c(),
                    a[1].to_f64_c(),
                    a[2].to_f64_c(),
                ],
            });
        }
    }
    Ok((prob, alphas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::train::{InitMode, ModelKind};
    use crate::nn::vnet::VNetConfig;
    use crate::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stitched_prediction_covers_the_volume() {
        let grid = GridSpec::new(32, 32, 8, 0.5, 0.5, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = RealVolume {
            grid,
            data: (0..grid.voxel_count()).map(|_| rng.gen::<f64>() - 0.5).collect(),
        };
        let hgrid = GridSpec::new(32, 32, 1, 0.5, 0.5, 1.0).unwrap();
        let holo = RealVolume {
            grid: hgrid,
            data: (0..32 * 32).map(|_| rng.gen::<f64>() - 0.5).collect(),
        };
        let params = ModelParams::<f32>::init(
            ModelKind::Dsn,
            &VNetConfig::desk(),
            16,
            &InitMode::Xavier,
            3,
        )
        .unwrap();
        let (prob, alphas) = predict_volume(&params, &input, &holo, 16).unwrap();
        assert_eq!(prob.grid, grid);
        assert!(prob.data.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(alphas.len(), 4);
        for a in &alphas {
            let s: f64 = a.alpha.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
