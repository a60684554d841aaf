//! Evaluation metrics: mean square error, maximum-value error (signed), and
//! the pixel-wise error image.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(1/n) * sum_i (pd_i - gt_i)^2`.
pub fn mse(pd: &Tensor, gt: &Tensor) -> Result<f64> {
    if !pd.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            context: "mse",
            left: pd.shape().to_vec(),
            right: gt.shape().to_vec(),
        });
    }
    if pd.is_empty() {
        return Err(Error::EmptyInput { context: "mse" });
    }
    let s: f64 = pd.data().iter().zip(gt.data()).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(s / pd.len() as f64)
}

/// Signed maximum error: `max(pd) - max(gt)`.
pub fn mpe(pd: &Tensor, gt: &Tensor) -> Result<f64> {
    if !pd.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            context: "mpe",
            left: pd.shape().to_vec(),
            right: gt.shape().to_vec(),
        });
    }
    Ok(pd.max_value()? - gt.max_value()?)
}

/// Pixel-wise error image: `gt - pd`, sign preserved.
pub fn pwe(gt: &Tensor, pd: &Tensor) -> Result<Tensor> {
    if !gt.same_shape(pd) {
        return Err(Error::ShapeMismatch {
            context: "pwe",
            left: gt.shape().to_vec(),
            right: pd.shape().to_vec(),
        });
    }
    let data: Vec<f64> = gt.data().iter().zip(pd.data()).map(|(g, p)| g - p).collect();
    Ok(Tensor::from_vec_unchecked(gt.shape().to_vec(), data))
}

/// `log10(mse)`, defined only for positive values.
pub fn lmse(mse: f64) -> Option<f64> {
    (mse > 0.0).then(|| mse.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn mse_hand_case() {
        let pd = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        let gt = Tensor::from_vec(vec![2], vec![0.0, 2.0]).unwrap();
        assert_eq!(mse(&pd, &gt).unwrap(), 1.0);
        assert_eq!(mse(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn mse_scales_quadratically() {
        let mut rng = Rng::new(5);
        let pd = Tensor::from_vec(vec![8], (0..8).map(|_| rng.next_symmetric(1.0)).collect()).unwrap();
        let gt = Tensor::from_vec(vec![8], (0..8).map(|_| rng.next_symmetric(1.0)).collect()).unwrap();
        let base = mse(&pd, &gt).unwrap();
        let scaled = mse(&pd.scaled(3.0), &gt.scaled(3.0)).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn mpe_signed_and_antisymmetric() {
        let pd = Tensor::from_vec(vec![3], vec![0.1, 0.7302, 0.2]).unwrap();
        let gt = Tensor::from_vec(vec![3], vec![0.6348, 0.3, 0.1]).unwrap();
        let e = mpe(&pd, &gt).unwrap();
        assert!((e - 0.0954).abs() < 1e-12);
        assert_eq!(mpe(&gt, &pd).unwrap(), -e);
    }

    #[test]
    fn mpe_permutation_invariant() {
        let pd = Tensor::from_vec(vec![4], vec![0.4, 0.1, 0.9, 0.3]).unwrap();
        let perm = Tensor::from_vec(vec![4], vec![0.9, 0.3, 0.4, 0.1]).unwrap();
        let gt = Tensor::from_vec(vec![4], vec![0.2, 0.5, 0.6, 0.0]).unwrap();
        assert_eq!(mpe(&pd, &gt).unwrap(), mpe(&perm, &gt).unwrap());
    }

    #[test]
    fn pwe_matches_mse_identity() {
        let mut rng = Rng::new(77);
        for _ in 0..10 {
            let pd = Tensor::from_vec(vec![5, 5], (0..25).map(|_| rng.next_f64()).collect()).unwrap();
            let gt = Tensor::from_vec(vec![5, 5], (0..25).map(|_| rng.next_f64()).collect()).unwrap();
            let e = pwe(&gt, &pd).unwrap();
            let mean_sq: f64 = e.data().iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
            // Bit-exact, not approximate: shared arithmetic.
            assert_eq!(mean_sq, mse(&pd, &gt).unwrap());
        }
    }

    #[test]
    fn pwe_constant_offset() {
        let pd = Tensor::full(vec![2, 2], 0.3);
        let gt = Tensor::full(vec![2, 2], 0.4);
        let e = pwe(&gt, &pd).unwrap();
        assert!(e.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let zero = pwe(&gt, &gt).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lmse_defined_for_positive() {
        assert_eq!(lmse(1e-3), Some(-3.0));
        assert_eq!(lmse(0.0), None);
    }
}
