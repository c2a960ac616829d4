//! Binary cross entropy over voxel probabilities.

use super::tensor::Tensor;
use super::Scalar;
use crate::{Error, Result};

/// Probabilities are clamped to [EPS, 1-EPS] before the logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross entropy: -(1/N) sum(y ln p + (1-y) ln(1-p)).
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, label: &[u8]) -> Result<T> {
    if pred.data.len() != label.len() {
        return Err(Error::Shape(format!(
            "prediction has {} voxels, label {}",
            pred.data.len(),
            label.len()
        )));
    }
    let eps = T::from_f64_c(BCE_EPS);
    let one = T::one();
    let n = T::from_f64_c(label.len() as f64);
    let mut acc = T::zero();
    for (&p, &y) in pred.data.iter().zip(label.iter()) {
        let p = p.max(eps).min(one - eps);
        acc = acc
            + if y == 1 {
                -(p.ln())
            } else {
                -((one - p).ln())
            };
    }
    Ok(acc / n)
}

/// Gradient of [`bce_loss`] with respect to the (unclamped) prediction.
/// Zero where the clamp saturates.
pub fn bce_backward<T: Scalar>(pred: &Tensor<T>, label: &[u8]) -> Result<Tensor<T>> {
    if pred.data.len() != label.len() {
        return Err(Error::Shape("prediction/label shape mismatch".into()));
    }
    let eps = T::from_f64_c(BCE_EPS);
    let one = T::one();
    let n = T::from_f64_c(label.len() as f64);
    let mut out = pred.clone();
    for (g, (&p, &y)) in out.data.iter_mut().zip(pred.data.iter().zip(label.iter())) {
        *g = if p < eps || p > one - eps {
            T::zero()
        } else {
            let target = if y == 1 { one } else { T::zero() };
            (p - target) / (p * (one - p)) / n
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(values: &[f64]) -> Tensor<f64> {
        Tensor::from_data(1, 1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_half_gives_ln2() {
        let pred = t(&[0.5; 64]);
        let label = [0u8, 1].repeat(32);
        let loss = bce_loss(&pred, &label).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_voxel_analytic_value() {
        let loss = bce_loss(&t(&[0.9]), &[1]).unwrap();
        assert!((loss + 0.9f64.ln()).abs() < 1e-12); // -ln 0.9 ~ 0.10536
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let pred = t(&[1.0, 0.0, 1.0, 0.0]);
        let label = [1u8, 0, 1, 0];
        let loss = bce_loss(&pred, &label).unwrap();
        assert!(loss < 1e-6, "clamped loss should be about eps: {loss}");
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(bce_loss(&t(&[0.5, 0.5]), &[1]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let probe = [0.3, 0.7, 0.5, 0.01, 0.99];
        let label = [1u8, 0, 1, 0, 1];
        let pred = t(&probe);
        let grad = bce_backward(&pred, &label).unwrap();
        let h = 1e-7;
        for i in 0..probe.len() {
            let mut up = probe.to_vec();
            up[i] += h;
            let mut dn = probe.to_vec();
            dn[i] -= h;
            let fd = (bce_loss(&t(&up), &label).unwrap() - bce_loss(&t(&dn), &label).unwrap())
                / (2.0 * h);
            assert!(
                (fd - grad.data[i]).abs() < 1e-5,
                "voxel {i}: fd {fd} vs {}",
                grad.data[i]
            );
        }
    }
}
