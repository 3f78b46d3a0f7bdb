//! Small shared building blocks: conv/linear layers with named parameters,
//! instance normalization, pooling.

use ndarray::{ArrayD, IxDyn};

use autodiff::rng::Prng;
use autodiff::{normal_init, Graph, ParamStore, Var};

/// Kernel initialization family. `Dcgan` (std 0.02) for adversarial nets,
/// `He` for plain feed-forward encoders/classifiers.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Dcgan,
    He,
}

impl Init {
    fn conv_std(self, in_ch: usize, k: usize) -> f64 {
        match self {
            Init::Dcgan => 0.02,
            Init::He => (2.0 / (in_ch * k * k) as f64).sqrt(),
        }
    }

    fn linear_std(self, d_in: usize) -> f64 {
        match self {
            Init::Dcgan => 0.02,
            Init::He => (2.0 / d_in as f64).sqrt(),
        }
    }
}

pub fn init_conv(
    store: &mut ParamStore,
    rng: &mut Prng,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    init: Init,
) {
    store.insert(
        &format!("{prefix}.k"),
        normal_init(rng, &[out_ch, in_ch, k, k], init.conv_std(in_ch, k)),
    );
    store.insert(&format!("{prefix}.b"), ArrayD::zeros(IxDyn(&[1, out_ch, 1, 1])));
}

pub fn conv_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Var {
    let k = g.param(store, &format!("{prefix}.k"));
    let b = g.param(store, &format!("{prefix}.b"));
    let y = g.conv2d(x, k, stride, pad);
    g.badd(y, b)
}

pub fn init_linear(
    store: &mut ParamStore,
    rng: &mut Prng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    init: Init,
) {
    store.insert(
        &format!("{prefix}.w"),
        normal_init(rng, &[d_in, d_out], init.linear_std(d_in)),
    );
    store.insert(&format!("{prefix}.b"), ArrayD::zeros(IxDyn(&[d_out])));
}

pub fn linear_forward(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{prefix}.w"));
    let b = g.param(store, &format!("{prefix}.b"));
    g.linear(x, w, b)
}

pub fn init_instance_norm(store: &mut ParamStore, prefix: &str, ch: usize) {
    store.insert(&format!("{prefix}.gamma"), ArrayD::from_elem(IxDyn(&[ch]), 1.0));
    store.insert(&format!("{prefix}.beta"), ArrayD::zeros(IxDyn(&[ch])));
}

/// Per-(sample, channel) normalization over the spatial extent, with learned
/// scale and shift. Composed from primitives, so the backward pass is exact.
pub fn instance_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let shape: Vec<usize> = g.shape(x).to_vec();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = (h * w) as f64;

    let sum = g.sum_axis(x, 3);
    let sum = g.sum_axis(sum, 2); // [B, C]
    let mean = g.scale(sum, 1.0 / hw);
    let mean_b = g.reshape(mean, &[b, c, 1, 1]);
    let mean_b = g.broadcast_to(mean_b, &shape);
    let centered = g.sub(x, mean_b);

    let sq = g.mul(centered, centered);
    let var_sum = g.sum_axis(sq, 3);
    let var_sum = g.sum_axis(var_sum, 2);
    let var = g.scale(var_sum, 1.0 / hw);
    let var = g.add_scalar(var, 1e-5);
    let rstd = g.powf(var, -0.5);
    let rstd_b = g.reshape(rstd, &[b, c, 1, 1]);
    let rstd_b = g.broadcast_to(rstd_b, &shape);
    let normed = g.mul(centered, rstd_b);

    let gamma = g.param(store, &format!("{prefix}.gamma"));
    let gamma = g.reshape(gamma, &[1, c, 1, 1]);
    let gamma = g.broadcast_to(gamma, &shape);
    let beta = g.param(store, &format!("{prefix}.beta"));
    let beta = g.reshape(beta, &[1, c, 1, 1]);
    let beta = g.broadcast_to(beta, &shape);
    let scaled = g.mul(normed, gamma);
    g.add(scaled, beta)
}

/// `[B, C, H, W] -> [B, C]` spatial mean.
pub fn global_mean_pool(g: &mut Graph, x: Var) -> Var {
    let shape: Vec<usize> = g.shape(x).to_vec();
    let hw = (shape[2] * shape[3]) as f64;
    let s = g.sum_axis(x, 3);
    let s = g.sum_axis(s, 2);
    g.scale(s, 1.0 / hw)
}

/// Row-normalize `[B, D]` to unit L2 norm.
pub fn l2_normalize_rows(g: &mut Graph, x: Var) -> Var {
    let shape: Vec<usize> = g.shape(x).to_vec();
    let sq = g.mul(x, x);
    let ss = g.sum_axis(sq, 1); // [B]
    let ss = g.add_scalar(ss, 1e-12);
    let inv = g.powf(ss, -0.5);
    let inv = g.reshape(inv, &[shape[0], 1]);
    let inv = g.broadcast_to(inv, &shape);
    g.mul(x, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::rng::{normal_vec, seeded};
    use ndarray::IxDyn;

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let mut rng = seeded(1);
        let mut store = ParamStore::new();
        init_instance_norm(&mut store, "n", 3);
        let mut g = Graph::new();
        let data = ArrayD::from_shape_vec(IxDyn(&[2, 3, 4, 4]), normal_vec(&mut rng, 96)).unwrap();
        let x = g.input(data);
        let y = instance_norm(&mut g, &store, "n", x);
        let yv = g.value(y);
        for b in 0..2 {
            for c in 0..3 {
                let mut mean = 0.0;
                let mut var = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        mean += yv[[b, c, i, j]];
                    }
                }
                mean /= 16.0;
                for i in 0..4 {
                    for j in 0..4 {
                        var += (yv[[b, c, i, j]] - mean).powi(2);
                    }
                }
                var /= 16.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn instance_norm_gradients() {
        let mut rng = seeded(2);
        let mut store = ParamStore::new();
        init_instance_norm(&mut store, "n", 2);
        store.insert(
            "x",
            ArrayD::from_shape_vec(IxDyn(&[1, 2, 3, 3]), normal_vec(&mut rng, 18)).unwrap(),
        );
        autodiff::check_gradients(
            &store,
            |s, g| {
                let x = g.param(s, "x");
                let y = instance_norm(g, s, "n", x);
                let y3 = g.mul(y, y);
                g.sum_all(y3)
            },
            1e-5,
            1e-4,
            1e-8,
        )
        .unwrap();
    }

    #[test]
    fn l2_normalize_produces_unit_rows() {
        let mut rng = seeded(3);
        let mut g = Graph::new();
        let data = ArrayD::from_shape_vec(IxDyn(&[4, 6]), normal_vec(&mut rng, 24)).unwrap();
        let x = g.input(data);
        let y = l2_normalize_rows(&mut g, x);
        let yv = g.value(y);
        for r in 0..4 {
            let norm: f64 = (0..6).map(|c| yv[[r, c]].powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
