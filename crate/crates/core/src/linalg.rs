//! Dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` by LU with partial pivoting. `None` if `a` is singular
/// or the solution is not finite.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Numerical rank: singular values above `rel_tol * max(1, largest singular value)`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let largest = sv.max();
    let cutoff = rel_tol * largest.max(f64::MIN_POSITIVE);
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Row vector `phi` times matrix minus `phi`, in the infinity norm.
pub fn left_fixed_point_residual(phi: &[f64], a: &DMatrix<f64>) -> f64 {
    let n = phi.len();
    (0..n)
        .map(|k| ((0..n).map(|j| phi[j] * a[(j, k)]).sum::<f64>() - phi[k]).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_solve() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        assert_eq!(numerical_rank(&a, 1e-10), 2);
        assert!(solve(&a, &DVector::from_element(3, 1.0)).is_none());
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = solve(&b, &DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.5]);
        assert_eq!(inf_norm(&a), 12.0);
    }
}
