//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending algebraic order.
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`, with its first
    /// nonzero component positive.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

fn square_dim(m: &Tensor) -> Result<usize> {
    match m.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(Error::shape("symmetric_eigendecomp", format!("expected a square matrix, got {s:?}"))),
    }
}

pub fn symmetric_eigendecomp(m: &Tensor) -> Result<SymmetricEigen> {
    let n = square_dim(m)?;
    let src = m.data();
    if !m.all_finite() {
        return Err(Error::invalid("symmetric_eigendecomp", "matrix has non-finite entries"));
    }
    let scale = m.max_abs().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((src[i * n + j] - src[j * n + i]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (src[i * n + j] + src[j * n + i]);
        }
    }
    // columns of v are the eigenvectors
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * frob {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = (0..n).map(|i| v[i * n + k]).collect();
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            col.iter_mut().for_each(|x| *x /= norm);
            if let Some(&first) = col.iter().find(|x| x.abs() > 1e-12) {
                if first < 0.0 {
                    col.iter_mut().for_each(|x| *x = -*x);
                }
            }
            col
        })
        .collect();
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, d: &[f64]) -> Tensor {
        Tensor::new(vec![n, n], d.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let m = mat(3, &[1.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 3.0]);
        let e = symmetric_eigendecomp(&m).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0, -2.0]);
        assert_eq!(e.vectors[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vectors[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(e.vectors[2], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_and_zero() {
        let e = symmetric_eigendecomp(&mat(2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        let e = symmetric_eigendecomp(&Tensor::zeros(&[3, 3])).unwrap();
        assert_eq!(e.vectors[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let e = symmetric_eigendecomp(&mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[0][0] - h).abs() < 1e-14 && (e.vectors[0][1] - h).abs() < 1e-14);
        assert!((e.vectors[1][0] - h).abs() < 1e-14 && (e.vectors[1][1] + h).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        assert!(matches!(
            symmetric_eigendecomp(&mat(2, &[1.0, 2.0, 0.0, 1.0])),
            Err(Error::NotSymmetric(_))
        ));
        assert!(symmetric_eigendecomp(&Tensor::zeros(&[2, 3])).is_err());
        // tiny asymmetry is symmetrised away
        assert!(symmetric_eigendecomp(&mat(2, &[1.0, 2.0, 2.0 + 1e-13, 1.0])).is_ok());
    }
}
