//! Finite-difference verification of every primitive op's backward pass.
//! All checks run in f64 with central differences.

use autodiff::rng::{derive, normal_vec};
use autodiff::{check_gradients, Graph, ParamStore, Var};
use ndarray::{ArrayD, IxDyn};

const EPS: f64 = 1e-5;
const RTOL: f64 = 1e-6;
const ATOL: f64 = 1e-9;

fn store_with(entries: &[(&str, &[usize], u64)]) -> ParamStore {
    let mut store = ParamStore::new();
    for &(name, shape, seed) in entries {
        let mut rng = derive(seed, name);
        let n: usize = shape.iter().product();
        let data = normal_vec(&mut rng, n);
        store.insert(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap());
    }
    store
}

/// Reduce any node to a scalar through a fixed random projection so the
/// upstream gradient is non-uniform.
fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape: Vec<usize> = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = derive(seed, "proj");
    let w = g.constant(ArrayD::from_shape_vec(IxDyn(&shape), normal_vec(&mut rng, n)).unwrap());
    let prod = g.mul(v, w);
    g.sum_all(prod)
}

fn check<F>(store: &ParamStore, build: F)
where
    F: Fn(&ParamStore, &mut Graph) -> Var,
{
    let report = check_gradients(store, build, EPS, RTOL, ATOL).unwrap();
    assert!(report.checked > 0);
}

#[test]
fn elementwise_binary_ops() {
    let store = store_with(&[("a", &[3, 4], 1), ("b", &[3, 4], 2)]);
    for op in ["add", "sub", "mul"] {
        check(&store, |s, g| {
            let a = g.param(s, "a");
            let b = g.param(s, "b");
            let y = match op {
                "add" => g.add(a, b),
                "sub" => g.sub(a, b),
                _ => g.mul(a, b),
            };
            project(g, y, 10)
        });
    }
}

#[test]
fn scalar_and_unary_ops() {
    let store = store_with(&[("a", &[2, 5], 3)]);
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.scale(a, 1.7);
        let y = g.add_scalar(y, 0.3);
        let y = g.tanh(y);
        let y = g.neg(y);
        project(g, y, 11)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.sigmoid(a);
        project(g, y, 12)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.exp(a);
        project(g, y, 13)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.softplus(a);
        project(g, y, 14)
    });
}

#[test]
fn ln_and_powf_on_positive_domain() {
    let mut store = ParamStore::new();
    let mut rng = derive(4, "pos");
    let data: Vec<f64> = normal_vec(&mut rng, 12).iter().map(|x| x.abs() + 0.5).collect();
    store.insert("a", ArrayD::from_shape_vec(IxDyn(&[3, 4]), data).unwrap());
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.ln(a);
        project(g, y, 15)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.powf(a, -0.5);
        project(g, y, 16)
    });
}

#[test]
fn relu_family_away_from_kink() {
    let mut store = ParamStore::new();
    let mut rng = derive(5, "kink");
    // Keep all magnitudes > 0.1 so eps-perturbations cannot cross zero.
    let data: Vec<f64> = normal_vec(&mut rng, 20)
        .iter()
        .map(|x| x.signum() * (x.abs() + 0.1))
        .collect();
    store.insert("a", ArrayD::from_shape_vec(IxDyn(&[4, 5]), data).unwrap());
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.relu(a);
        project(g, y, 17)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.leaky_relu(a, 0.2);
        project(g, y, 18)
    });
}

#[test]
fn shape_ops() {
    let store = store_with(&[("a", &[2, 3, 4], 6)]);
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.reshape(a, &[6, 4]);
        project(g, y, 19)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.permute(a, &[2, 0, 1]);
        project(g, y, 20)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.sum_axis(a, 1);
        project(g, y, 21)
    });
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let y = g.slice(a, 2, 1, 2);
        project(g, y, 22)
    });
    let small = store_with(&[("b", &[1, 3, 1], 7)]);
    check(&small, |s, g| {
        let b = g.param(s, "b");
        let y = g.broadcast_to(b, &[2, 3, 4]);
        project(g, y, 23)
    });
}

#[test]
fn matmul_and_linear() {
    let store = store_with(&[("x", &[3, 4], 8), ("w", &[4, 2], 9), ("b", &[2], 10)]);
    check(&store, |s, g| {
        let x = g.param(s, "x");
        let w = g.param(s, "w");
        let b = g.param(s, "b");
        let y = g.linear(x, w, b);
        project(g, y, 24)
    });
    check(&store, |s, g| {
        let x = g.param(s, "x");
        let w = g.param(s, "w");
        let xt = g.transpose2(x);
        let wt = g.transpose2(w);
        let y = g.matmul(wt, xt);
        project(g, y, 25)
    });
}

#[test]
fn concat_and_index_select() {
    let store = store_with(&[("a", &[2, 3], 11), ("b", &[2, 2], 12), ("t", &[5, 3], 13)]);
    check(&store, |s, g| {
        let a = g.param(s, "a");
        let b = g.param(s, "b");
        let y = g.concat(1, &[a, b]);
        project(g, y, 26)
    });
    check(&store, |s, g| {
        let t = g.param(s, "t");
        // Repeated row exercises scatter-add accumulation.
        let y = g.index_select(t, &[0, 3, 3, 1]);
        project(g, y, 27)
    });
}

#[test]
fn masked_softmax_forward_and_backward() {
    // Worked values.
    let mut g = Graph::new();
    let z = g.input(ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let mask = ndarray::array![[1.0, 1.0], [1.0, 1.0]];
    let p = g.masked_softmax_rows(z, &mask);
    let pv = g.value(p);
    assert!((pv[[0, 0]] - 0.5).abs() < 1e-12);
    let e = std::f64::consts::E;
    assert!((pv[[1, 0]] - e / (e + 1.0)).abs() < 1e-12);

    // Masked entries ignore even huge logits.
    let mut g = Graph::new();
    let z = g.input(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![5.0, 999.0]).unwrap());
    let mask = ndarray::array![[1.0, 0.0]];
    let p = g.masked_softmax_rows(z, &mask);
    assert_eq!(g.value(p)[[0, 0]], 1.0);
    assert_eq!(g.value(p)[[0, 1]], 0.0);

    // Gradient check with a partial mask.
    let store = store_with(&[("z", &[3, 5], 14)]);
    let mask = ndarray::array![
        [1.0, 1.0, 0.0, 1.0, 0.0],
        [1.0, 1.0, 1.0, 1.0, 1.0],
        [0.0, 0.0, 1.0, 0.0, 1.0]
    ];
    check(&store, move |s, g| {
        let z = g.param(s, "z");
        let p = g.masked_softmax_rows(z, &mask);
        project(g, p, 28)
    });
}

#[test]
#[should_panic(expected = "fully masked")]
fn masked_softmax_rejects_all_masked_row() {
    let mut g = Graph::new();
    let z = g.input(ArrayD::zeros(IxDyn(&[1, 3])));
    let mask = ndarray::array![[0.0, 0.0, 0.0]];
    g.masked_softmax_rows(z, &mask);
}

#[test]
fn conv2d_stride1_and_stride2() {
    let store = store_with(&[("x", &[2, 3, 5, 5], 15), ("k", &[4, 3, 3, 3], 16), ("b", &[1, 4, 1, 1], 17)]);
    check(&store, |s, g| {
        let x = g.param(s, "x");
        let k = g.param(s, "k");
        let b = g.param(s, "b");
        let y = g.conv2d(x, k, 1, 1);
        let y = g.badd(y, b);
        project(g, y, 29)
    });
    check(&store, |s, g| {
        let x = g.param(s, "x");
        let k = g.param(s, "k");
        let y = g.conv2d(x, k, 2, 1);
        project(g, y, 30)
    });
}

#[test]
fn conv2d_matches_direct_computation() {
    // 1x1 input channel, 2x2 kernel, no padding: verify against hand loop.
    let mut g = Graph::new();
    let x = g.input(
        ArrayD::from_shape_vec(IxDyn(&[1, 1, 3, 3]), (1..=9).map(f64::from).collect()).unwrap(),
    );
    let k = g.input(ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.conv2d(x, k, 1, 0);
    let yv = g.value(y);
    // out[0,0] = 1*1 + 2*2 + 4*3 + 5*4 = 37
    assert_eq!(yv[[0, 0, 0, 0]], 37.0);
    assert_eq!(yv[[0, 0, 1, 1]], 1.0 * 5.0 + 2.0 * 6.0 + 3.0 * 8.0 + 4.0 * 9.0);
}

#[test]
fn upsample_nearest() {
    let store = store_with(&[("x", &[2, 2, 3, 3], 18)]);
    check(&store, |s, g| {
        let x = g.param(s, "x");
        let y = g.upsample_nearest2(x);
        project(g, y, 31)
    });
    let mut g = Graph::new();
    let x = g.input(ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 2]), vec![3.0, 7.0]).unwrap());
    let y = g.upsample_nearest2(x);
    let yv = g.value(y);
    assert_eq!(yv.shape(), &[1, 1, 2, 4]);
    assert_eq!(yv[[0, 0, 1, 1]], 3.0);
    assert_eq!(yv[[0, 0, 0, 2]], 7.0);
}

#[test]
fn param_reuse_accumulates_once_per_use() {
    // y = a*a uses `a` twice; d/da (sum a*a) = 2a.
    let store = store_with(&[("a", &[2, 2], 19)]);
    check(&store, |s, g| {
        let a1 = g.param(s, "a");
        let a2 = g.param(s, "a");
        let y = g.mul(a1, a2);
        g.sum_all(y)
    });
}

#[test]
fn adam_minimizes_quadratic() {
    use autodiff::{Adam, AdamConfig};
    let mut store = ParamStore::new();
    store.insert("x", ArrayD::from_shape_vec(IxDyn(&[4]), vec![5.0, -3.0, 2.0, 8.0]).unwrap());
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        ..Default::default()
    });
    for _ in 0..400 {
        let mut g = Graph::new();
        let x = g.param(&store, "x");
        let sq = g.mul(x, x);
        let loss = g.sum_all(sq);
        g.backward(loss);
        opt.step(&mut store, &g.param_grads());
    }
    let x = store.get("x").unwrap();
    assert!(x.iter().all(|v| v.abs() < 1e-3), "Adam failed to converge: {x:?}");
}

#[test]
fn params_stay_f32_representable_after_updates() {
    use autodiff::{Adam, AdamConfig};
    let mut store = ParamStore::new();
    store.insert("x", ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.1, 0.2, 0.3]).unwrap());
    store.round_to_f32();
    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..5 {
        let mut g = Graph::new();
        let x = g.param(&store, "x");
        let sq = g.mul(x, x);
        let loss = g.sum_all(sq);
        g.backward(loss);
        opt.step(&mut store, &g.param_grads());
    }
    for &v in store.get("x").unwrap() {
        assert_eq!(v, v as f32 as f64);
    }
}
