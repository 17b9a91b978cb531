//! Dense symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Serves the exact spectral filter and the Laplacian spectrum checks. The
//! muscle graphs here are small (at most 128 nodes), where Jacobi is simple,
//! robust, and accurate to near machine precision.

use super::SquareMat;

/// Eigenvalues (ascending) and matching orthonormal eigenvectors of a
/// symmetric matrix. Column `j` of the returned matrix is the eigenvector
/// for eigenvalue `j`.
pub fn symmetric_eigen(mat: &SquareMat) -> (Vec<f64>, SquareMat) {
    let n = mat.n();
    let mut a = mat.clone();
    let mut v = SquareMat::identity(n);

    let off = |a: &SquareMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.at(i, j) * a.at(i, j);
                }
            }
        }
        s
    };

    let scale: f64 = (0..n).map(|i| a.at(i, i).abs()).fold(1.0, f64::max);
    let tol = 1e-30 * scale * scale;
    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(i, i).partial_cmp(&a.at(j, j)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vectors = SquareMat::zeros(n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, new_col, v.at(row, old_col));
        }
    }
    (values, vectors)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration on the Rayleigh quotient.
pub fn power_iteration_lambda_max(mat: &SquareMat, tol: f64, max_iters: usize) -> f64 {
    let n = mat.n();
    // Deterministic start with energy in every coordinate.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 / (i + 1) as f64).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nx = norm(&x);
    for v in &mut x {
        *v /= nx;
    }

    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let y = mat.mul_vec(&x);
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        let next: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = y.iter().map(|v| v / ny).collect();
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}
