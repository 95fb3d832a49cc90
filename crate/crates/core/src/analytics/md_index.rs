//! Minimum distance index between an unmixing estimate and a mixing matrix.

use nalgebra::DMatrix;
use thiserror::Error;

use super::assignment::min_cost_assignment;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdError {
    #[error("matrix is singular")]
    Singular,
    #[error("matrices must be square and of equal size ({0}x{1} vs {2}x{3})")]
    Shape(usize, usize, usize, usize),
}

const SINGULAR_RCOND: f64 = 1e-13;

/// MD index of `G = W A`; 0 iff `G` is a scaled, signed permutation.
pub fn md_index(w: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64, MdError> {
    if !w.is_square() || !a.is_square() || w.nrows() != a.nrows() {
        return Err(MdError::Shape(w.nrows(), w.ncols(), a.nrows(), a.ncols()));
    }
    if linalg::inverse_condition(w) < SINGULAR_RCOND || linalg::inverse_condition(a) < SINGULAR_RCOND {
        return Err(MdError::Singular);
    }
    Ok(md_of_gain(&(w * a)))
}

/// MD index of a gain matrix `G` directly.
pub fn md_of_gain(g: &DMatrix<f64>) -> f64 {
    let p = g.nrows();
    if p < 2 {
        return 0.0;
    }
    // p - max_assign(H) equals the minimum over assignments of the mass each
    // row keeps outside its assigned column. Summing that mass directly avoids
    // the cancellation in `p - sum(H)`.
    let deficit: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let sq: Vec<f64> = g.row(i).iter().map(|v| v * v).collect();
            let row_mass: f64 = sq.iter().sum();
            (0..p)
                .map(|j| {
                    if row_mass > 0.0 {
                        sq.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, v)| v).sum::<f64>() / row_mass
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    let (_, missing) = min_cost_assignment(&deficit);
    (missing / (p as f64 - 1.0)).max(0.0).sqrt().min(1.0)
}

/// MD index between two runs' unmixing matrices, `W1 W2^(-1)`, averaged with
/// the reverse direction so the result is symmetric.
pub fn md_between_runs(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64, MdError> {
    let inv2 = w2.clone().try_inverse().ok_or(MdError::Singular)?;
    let inv1 = w1.clone().try_inverse().ok_or(MdError::Singular)?;
    Ok(0.5 * (md_index(w1, &inv2)? + md_index(w2, &inv1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn exact_inverse_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(4, &mut rng);
        let w = a.clone().try_inverse().unwrap();
        assert!(md_index(&w, &a).unwrap() < 1e-7);
    }

    #[test]
    fn permutation_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian(5, &mut rng);
        let w = gaussian(5, &mut rng);
        let base = md_index(&w, &a).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let pd = DMatrix::from_fn(5, 5, |i, j| if perm[i] == j { rng.random_range(0.5..3.0) * if i % 2 == 0 { -1.0 } else { 1.0 } } else { 0.0 });
        let moved = md_index(&(pd * &w), &a).unwrap();
        assert!((base - moved).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn singular_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(md_index(&DMatrix::identity(2, 2), &a), Err(MdError::Singular));
    }

    #[test]
    fn worst_case_is_one() {
        // Every row spreads its mass evenly: max assignment = 1.
        let g = DMatrix::from_element(3, 3, 1.0);
        assert!((md_of_gain(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn run_comparison_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w1 = gaussian(4, &mut rng);
        let w2 = gaussian(4, &mut rng);
        let a = md_between_runs(&w1, &w2).unwrap();
        let b = md_between_runs(&w2, &w1).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(md_between_runs(&w1, &w1).unwrap() < 1e-7);
    }
}
