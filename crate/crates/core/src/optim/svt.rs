use nalgebra::DMatrix;

use crate::linalg::SortedSvd;

/// Singular value thresholding, the proximal operator of `tau * ||.||_*`:
/// `U max(S - tau, 0) V^T`. Negative `tau` is treated as zero.
pub fn svt(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if tau <= 0.0 {
        return a.clone();
    }
    SortedSvd::new(a).reconstruct_with(|s| (s - tau).max(0.0))
}

/// Sum of singular values.
pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let t = svt(&a, 1.0);
        assert!((t - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
        assert_eq!(svt(&a, 0.0), a);
        assert!(svt(&a, 3.0).norm() < 1e-12);
        assert!(svt(&a, 10.0).norm() < 1e-12);
        assert!((nuclear_norm(&a) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn shrinks_every_singular_value_by_tau() {
        let a = DMatrix::from_fn(4, 3, |r, c| ((r * 3 + c * 5) % 7) as f64 - 3.0);
        let s = a.singular_values();
        let t = svt(&a, 0.5).singular_values();
        let mut want: Vec<f64> = s.iter().map(|x| (x - 0.5).max(0.0)).collect();
        let mut got: Vec<f64> = t.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (w, g) in want.iter().zip(&got) {
            assert!((w - g).abs() < 1e-10);
        }
    }
}
