use super::Tensor;
use crate::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-12;

/// Solves `A y = b` by Gaussian elimination with partial pivoting.
///
/// Used as the exact-inference reference for the CRF, so it favours clarity
/// over speed (O(n^3), dense).
pub fn solve_dense(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = match a.shape() {
        [r, c] if r == c => *r,
        s => return Err(Error::ShapeMismatch(format!("expected square matrix, got {s:?}"))),
    };
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!("rhs has {} entries, matrix is {n}x{n}", b.len())));
    }
    let mut m = a.data().to_vec();
    let mut y = b.data().to_vec();

    for col in 0..n {
        let (piv_row, piv_abs) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_abs <= PIVOT_FLOOR {
            return Err(Error::SingularMatrix { column: col, pivot: piv_abs });
        }
        if piv_row != col {
            for k in 0..n {
                m.swap(col * n + k, piv_row * n + k);
            }
            y.swap(col, piv_row);
        }
        let pivot = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            m[r * n + col] = 0.0;
            for k in col + 1..n {
                m[r * n + k] -= factor * m[col * n + k];
            }
            y[r] -= factor * y[col];
        }
    }

    for row in (0..n).rev() {
        let mut acc = y[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * y[k];
        }
        y[row] = acc / m[row * n + row];
    }
    Tensor::new(vec![n], y)
}

/// `A x` for a rank-2 `A` and a vector `x`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (r, c) = match a.shape() {
        [r, c] => (*r, *c),
        s => return Err(Error::ShapeMismatch(format!("expected matrix, got {s:?}"))),
    };
    if x.len() != c {
        return Err(Error::ShapeMismatch(format!("matvec {r}x{c} with {}", x.len())));
    }
    let out = (0..r)
        .map(|i| a.data()[i * c..(i + 1) * c].iter().zip(x.data()).map(|(p, q)| p * q).sum())
        .collect();
    Tensor::new(vec![r], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, SeededRng};
    use proptest::prelude::*;

    fn residual_inf(a: &Tensor, y: &Tensor, b: &Tensor) -> f64 {
        let ay = matvec(a, y).unwrap();
        ay.data().iter().zip(b.data()).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
    }

    #[test]
    fn identity_returns_rhs() {
        let b = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = solve_dense(&Tensor::identity(3), &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn two_by_two_analytic() {
        // inverse of [[2,-1],[-1,2]] is [[2,1],[1,2]]/3, so y = (2/3, 4/3)
        let a = Tensor::new(vec![2, 2], vec![2.0, -1.0, -1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.0, 2.0]).unwrap();
        let y = solve_dense(&a, &b).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let y = solve_dense(&a, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(solve_dense(&a, &b), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(solve_dense(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn diagonally_dominant_8x8() {
        let mut rng = SeededRng::new(8);
        let mut a = gaussian_sample(&mut rng, &[8, 8], 0.0, 1.0).unwrap();
        for i in 0..8 {
            let row: f64 = (0..8).map(|j| a.get(&[i, j]).abs()).sum();
            a.set(&[i, i], row + 1.0);
        }
        let b = gaussian_sample(&mut rng, &[8], 0.0, 1.0).unwrap();
        let y = solve_dense(&a, &b).unwrap();
        assert!(residual_inf(&a, &y, &b) < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residual_small_on_well_conditioned(n in 1usize..=200, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let mut a = gaussian_sample(&mut rng, &[n, n], 0.0, 1.0).unwrap();
            for i in 0..n {
                let v = a.get(&[i, i]);
                a.set(&[i, i], v + 2.0 * (n as f64).sqrt() + 1.0);
            }
            let b = gaussian_sample(&mut rng, &[n], 0.0, 10.0).unwrap();
            let y = solve_dense(&a, &b).unwrap();
            let tol = 1e-9 * b.max_abs().max(1.0);
            prop_assert!(residual_inf(&a, &y, &b) <= tol);
        }
    }
}
