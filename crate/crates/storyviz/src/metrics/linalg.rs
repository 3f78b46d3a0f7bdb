//! Dense symmetric eigendecomposition via cyclic Jacobi rotations. Sizes here
//! top out at a few hundred, where Jacobi is plenty fast and fully
//! deterministic.

use ndarray::{Array1, Array2};

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi_eigh: matrix must be square");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);

    let off = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[[i, j]] * m[[i, j]];
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let tol = 1e-24 * scale;

    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut vals: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let eigvals = Array1::from_iter(vals.iter().map(|&(x, _)| x));
    let mut eigvecs = Array2::<f64>::zeros((n, n));
    for (new_col, &(_, old_col)) in vals.iter().enumerate() {
        for r in 0..n {
            eigvecs[[r, new_col]] = v[[r, old_col]];
        }
    }
    (eigvals, eigvecs)
}

/// Symmetric PSD square root; eigenvalues below zero are clipped.
pub fn sqrt_psd(a: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = jacobi_eigh(a);
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = vals[j].max(0.0).sqrt();
        for i in 0..n {
            scaled[[i, j]] *= s;
        }
    }
    scaled.dot(&vecs.t())
}

/// Force exact symmetry: `(A + A^T) / 2`.
pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigh_recovers_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -1.0]];
        let (vals, _) = jacobi_eigh(&a);
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_reconstructs_matrix() {
        use autodiff::rng::{normal_vec, seeded};
        let n = 24;
        let mut rng = seeded(5);
        let raw = Array2::from_shape_vec((n, n), normal_vec(&mut rng, n * n)).unwrap();
        let sym = symmetrize(&raw);
        let (vals, vecs) = jacobi_eigh(&sym);
        let mut lam = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            lam[[i, i]] = vals[i];
        }
        let rebuilt = vecs.dot(&lam).dot(&vecs.t());
        for (a, b) in sym.iter().zip(rebuilt.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn sqrt_psd_squares_back() {
        use autodiff::rng::{normal_vec, seeded};
        let n = 16;
        let mut rng = seeded(6);
        let raw = Array2::from_shape_vec((n, n), normal_vec(&mut rng, n * n)).unwrap();
        let psd = raw.dot(&raw.t()); // PSD by construction
        let root = sqrt_psd(&psd);
        let squared = root.dot(&root);
        for (a, b) in psd.iter().zip(squared.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
