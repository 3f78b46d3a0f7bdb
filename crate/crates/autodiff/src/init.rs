use ndarray::{Array2, ArrayD, IxDyn};

use crate::rng::{normal, Prng};

/// Gaussian init with the given standard deviation.
pub fn normal_init(rng: &mut Prng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal(rng) * std).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Uniform init on `[-a, a]`.
pub fn uniform_init(rng: &mut Prng, shape: &[usize], a: f64) -> ArrayD<f64> {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * a).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Orthogonal init for a 2-D `[rows, cols]` map (Gram-Schmidt on a Gaussian
/// draw; the smaller side is orthonormalized). Higher-rank shapes are treated
/// as `[shape[0], rest]`.
pub fn orthogonal_init(rng: &mut Prng, shape: &[usize], gain: f64) -> ArrayD<f64> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let flat = if rows <= cols {
        gram_schmidt_rows(rng, rows, cols)
    } else {
        let q = gram_schmidt_rows(rng, cols, rows);
        q.t().as_standard_layout().to_owned()
    };
    let flat = flat.mapv(|x| x * gain);
    flat.into_shape_with_order(IxDyn(shape)).unwrap()
}

fn gram_schmidt_rows(rng: &mut Prng, rows: usize, cols: usize) -> Array2<f64> {
    assert!(rows <= cols);
    let mut q = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        let mut v: Vec<f64> = (0..cols).map(|_| normal(rng)).collect();
        loop {
            for j in 0..i {
                let qj = q.row(j);
                let dot: f64 = qj.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                for (vk, &qk) in v.iter_mut().zip(qj.iter()) {
                    *vk -= dot * qk;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for vk in v.iter_mut() {
                    *vk /= norm;
                }
                break;
            }
            // Degenerate draw; resample.
            v = (0..cols).map(|_| normal(rng)).collect();
        }
        q.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
    }
    q
}
