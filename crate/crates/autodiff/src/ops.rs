//! Primitive tape operations. Shape violations are programmer errors and
//! panic, mirroring `ndarray`; fallible validation belongs to callers.

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Slice};

use crate::graph::{Graph, Var};

/// Sum `g` down to `target` shape, inverting a broadcast.
pub(crate) fn reduce_to_shape(mut g: ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    while g.ndim() > target.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..g.ndim() {
        if target[ax] == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: operand shapes differ");
}

impl Graph {
    // ---- binary elementwise (same shape) ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(&self.values[a.0], &self.values[b.0], "add");
        let out = &self.values[a.0] + &self.values[b.0];
        self.push_op(out, vec![a.0, b.0], Box::new(|_, g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(&self.values[a.0], &self.values[b.0], "sub");
        let out = &self.values[a.0] - &self.values[b.0];
        self.push_op(
            out,
            vec![a.0, b.0],
            Box::new(|_, g| vec![g.clone(), g.mapv(|x| -x)]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(&self.values[a.0], &self.values[b.0], "mul");
        let out = &self.values[a.0] * &self.values[b.0];
        let (ai, bi) = (a.0, b.0);
        self.push_op(
            out,
            vec![a.0, b.0],
            Box::new(move |vals, g| vec![g * &vals[bi], g * &vals[ai]]),
        )
    }

    // ---- scalar ops ----

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].mapv(|x| x * c);
        self.push_op(out, vec![a.0], Box::new(move |_, g| vec![g.mapv(|x| x * c)]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].mapv(|x| x + c);
        self.push_op(out, vec![a.0], Box::new(|_, g| vec![g.clone()]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    // ---- unary elementwise ----

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x.max(0.0));
        let ai = a.0;
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |vals, g| {
                let mut dz = g.clone();
                dz.zip_mut_with(&vals[ai], |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![dz]
            }),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.values[a.0].mapv(|x| if x > 0.0 { x } else { alpha * x });
        let ai = a.0;
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |vals, g| {
                let mut dz = g.clone();
                dz.zip_mut_with(&vals[ai], |d, &x| {
                    if x <= 0.0 {
                        *d *= alpha
                    }
                });
                vec![dz]
            }),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::tanh);
        self.push_op_self(out, vec![a.0], |oi| {
            Box::new(move |vals, g| vec![g * &vals[oi].mapv(|t| 1.0 - t * t)])
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push_op_self(out, vec![a.0], |oi| {
            Box::new(move |vals, g| vec![g * &vals[oi].mapv(|s| s * (1.0 - s))])
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::exp);
        self.push_op_self(out, vec![a.0], |oi| {
            Box::new(move |vals, g| vec![g * &vals[oi]])
        })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::ln);
        let ai = a.0;
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |vals, g| vec![g / &vals[ai]]),
        )
    }

    /// Elementwise power; domain must keep `x^(p-1)` finite.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.values[a.0].mapv(|x| x.powf(p));
        let ai = a.0;
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |vals, g| vec![g * &vals[ai].mapv(|x| p * x.powf(p - 1.0))]),
        )
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        let ai = a.0;
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |vals, g| vec![g * &vals[ai].mapv(|x| 1.0 / (1.0 + (-x).exp()))]),
        )
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.values[a.0]
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible element count");
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| {
                vec![g
                    .clone()
                    .into_shape_with_order(IxDyn(&parent_shape))
                    .unwrap()]
            }),
        )
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.values[a.0]
            .broadcast(IxDyn(shape))
            .expect("broadcast_to: incompatible shapes")
            .to_owned();
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| vec![reduce_to_shape(g.clone(), &parent_shape)]),
        )
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let out = self.values[a.0]
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let axes_owned = axes.to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| {
                let mut inv = vec![0usize; axes_owned.len()];
                for (i, &ax) in axes_owned.iter().enumerate() {
                    inv[ax] = i;
                }
                vec![g.view().permuted_axes(IxDyn(&inv)).as_standard_layout().to_owned()]
            }),
        )
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        assert_eq!(self.values[a.0].ndim(), 2, "transpose2 expects rank 2");
        self.permute(a, &[1, 0])
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.values[a.0].sum());
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| {
                let s = g[IxDyn(&[])];
                vec![ArrayD::from_elem(IxDyn(&parent_shape), s)]
            }),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, dropping it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let out = self.values[a.0].sum_axis(Axis(axis));
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| {
                let expanded = g.clone().insert_axis(Axis(axis));
                vec![expanded
                    .broadcast(IxDyn(&parent_shape))
                    .unwrap()
                    .to_owned()]
            }),
        )
    }

    // ---- linear algebra ----

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.values[a.0].view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.values[b.0].view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(av.ncols(), bv.nrows(), "matmul: inner dimensions differ");
        let out = av.dot(&bv).into_dyn();
        let (ai, bi) = (a.0, b.0);
        self.push_op(
            out,
            vec![a.0, b.0],
            Box::new(move |vals, g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = vals[ai].view().into_dimensionality::<Ix2>().unwrap();
                let b2 = vals[bi].view().into_dimensionality::<Ix2>().unwrap();
                vec![g2.dot(&b2.t()).into_dyn(), a2.t().dot(&g2).into_dyn()]
            }),
        )
    }

    // ---- structure ----

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero parts");
        let views: Vec<ArrayViewD<f64>> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        // concatenate along inner axes yields non-standard layouts; the tape
        // requires standard layout everywhere.
        let out = if out.is_standard_layout() {
            out
        } else {
            out.as_standard_layout().to_owned()
        };
        let sizes: Vec<usize> = parts.iter().map(|p| self.values[p.0].shape()[axis]).collect();
        self.push_op(
            out,
            parts.iter().map(|p| p.0).collect(),
            Box::new(move |_, g| {
                let mut offset = 0;
                sizes
                    .iter()
                    .map(|&sz| {
                        let piece = g
                            .slice_axis(Axis(axis), Slice::from(offset..offset + sz))
                            .to_owned();
                        offset += sz;
                        piece
                    })
                    .collect()
            }),
        )
    }

    /// Contiguous slab along one axis.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let out = self.values[a.0]
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push_op(
            out,
            vec![a.0],
            Box::new(move |_, g| {
                let mut full = ArrayD::zeros(IxDyn(&parent_shape));
                full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![full]
            }),
        )
    }

    /// Row gather from a 2-D table; backward scatter-adds.
    pub fn index_select(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.values[table.0]
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let cols = t.ncols();
        let mut out = ndarray::Array2::<f64>::zeros((ids.len(), cols));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let ids_owned = ids.to_vec();
        let (rows, tcols) = (t.nrows(), cols);
        self.push_op(
            out.into_dyn(),
            vec![table.0],
            Box::new(move |_, g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut acc = ndarray::Array2::<f64>::zeros((rows, tcols));
                for (r, &id) in ids_owned.iter().enumerate() {
                    let mut row = acc.row_mut(id);
                    row += &g2.row(r);
                }
                vec![acc.into_dyn()]
            }),
        )
    }

    // ---- softmax ----

    /// Row-wise softmax over unmasked entries of `[R, C]` logits. Masked
    /// entries are exactly zero in the output and never read, so arbitrary
    /// (even huge) values there cannot overflow. Panics if a row is fully
    /// masked; callers validate first.
    pub fn masked_softmax_rows(&mut self, logits: Var, mask: &ndarray::Array2<f64>) -> Var {
        let z = self.values[logits.0]
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        assert_eq!(z.shape(), mask.shape(), "masked_softmax: mask shape");
        let (r, c) = (z.nrows(), z.ncols());
        let mut p = ndarray::Array2::<f64>::zeros((r, c));
        for i in 0..r {
            let mut m = f64::NEG_INFINITY;
            for j in 0..c {
                if mask[[i, j]] != 0.0 {
                    m = m.max(z[[i, j]]);
                }
            }
            assert!(m.is_finite(), "masked_softmax: fully masked row {i}");
            let mut s = 0.0;
            for j in 0..c {
                if mask[[i, j]] != 0.0 {
                    let e = (z[[i, j]] - m).exp();
                    p[[i, j]] = e;
                    s += e;
                }
            }
            for j in 0..c {
                p[[i, j]] /= s;
            }
        }
        self.push_op_self(p.into_dyn(), vec![logits.0], |oi| {
            Box::new(move |vals, g| {
                let p = vals[oi].view().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dz = ndarray::Array2::<f64>::zeros(p.raw_dim());
                for i in 0..p.nrows() {
                    let dot: f64 = p.row(i).iter().zip(g2.row(i)).map(|(&pj, &gj)| pj * gj).sum();
                    for j in 0..p.ncols() {
                        dz[[i, j]] = p[[i, j]] * (g2[[i, j]] - dot);
                    }
                }
                vec![dz.into_dyn()]
            })
        })
    }

    // ---- broadcasting conveniences ----

    /// `a + broadcast(b)`.
    pub fn badd(&mut self, a: Var, b: Var) -> Var {
        let shape: Vec<usize> = self.values[a.0].shape().to_vec();
        let bb = self.broadcast_to(b, &shape);
        self.add(a, bb)
    }

    /// `a * broadcast(b)`.
    pub fn bmul(&mut self, a: Var, b: Var) -> Var {
        let shape: Vec<usize> = self.values[a.0].shape().to_vec();
        let bb = self.broadcast_to(b, &shape);
        self.mul(a, bb)
    }

    /// Affine layer `x W + b` for `x: [m,k]`, `w: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.badd(y, b)
    }
}
