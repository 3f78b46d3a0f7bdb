//! 2-D convolution (im2col + GEMM) and nearest-neighbour upsampling, NCHW.

use ndarray::{Array2, Array4, ArrayD, Ix4};

use crate::graph::{Graph, Var};

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold one sample `[Ci,H,W]` (as flat slice) into `[Ci*kh*kw, Ho*Wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (ho, wo) = (out_len(h, kh, stride, pad), out_len(w, kw, stride, pad));
    let mut col = Array2::<f64>::zeros((ci * kh * kw, ho * wo));
    let cs = col.as_slice_mut().unwrap();
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let base = row * ho * wo;
                for oh in 0..ho {
                    let ih = oh * stride + ki;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let ih = ih - pad;
                    for ow in 0..wo {
                        let iw = ow * stride + kj;
                        if iw < pad || iw >= w + pad {
                            continue;
                        }
                        cs[base + oh * wo + ow] = x[(c * h + ih) * w + (iw - pad)];
                    }
                }
            }
        }
    }
    col
}

/// Fold `[Ci*kh*kw, Ho*Wo]` gradients back onto one `[Ci,H,W]` sample.
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &Array2<f64>,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let (ho, wo) = (out_len(h, kh, stride, pad), out_len(w, kw, stride, pad));
    let cs = col.as_slice().unwrap();
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let base = row * ho * wo;
                for oh in 0..ho {
                    let ih = oh * stride + ki;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let ih = ih - pad;
                    for ow in 0..wo {
                        let iw = ow * stride + kj;
                        if iw < pad || iw >= w + pad {
                            continue;
                        }
                        out[(c * h + ih) * w + (iw - pad)] += cs[base + oh * wo + ow];
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Convolution of `x: [B,Ci,H,W]` with `k: [Co,Ci,kh,kw]`, zero padding.
    /// Bias is composed separately (`badd` with a `[1,Co,1,1]` parameter).
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Var {
        let xs = self.values[x.0].shape().to_vec();
        let ks = self.values[k.0].shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be [B,Ci,H,W]");
        assert_eq!(ks.len(), 4, "conv2d: kernel must be [Co,Ci,kh,kw]");
        assert_eq!(xs[1], ks[1], "conv2d: channel mismatch");
        let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ks[0], ks[2], ks[3]);
        let (ho, wo) = (out_len(h, kh, stride, pad), out_len(w, kw, stride, pad));

        let xv = self.values[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let k2 = self.values[k.0]
            .clone()
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        let mut out = Array4::<f64>::zeros((b, co, ho, wo));
        let x_flat = xv.as_slice().unwrap();
        let sample = ci * h * w;
        for bi in 0..b {
            let col = im2col(&x_flat[bi * sample..(bi + 1) * sample], ci, h, w, kh, kw, stride, pad);
            let o = k2.dot(&col); // [Co, Ho*Wo]
            out.index_axis_mut(ndarray::Axis(0), bi)
                .assign(&o.into_shape_with_order((co, ho, wo)).unwrap());
        }

        let (xi, kid) = (x.0, k.0);
        self.push_op(
            out.into_dyn(),
            vec![x.0, k.0],
            Box::new(move |vals, g| {
                let xv = vals[xi].view().into_dimensionality::<Ix4>().unwrap();
                let x_flat = xv.as_slice().unwrap();
                let k2 = vals[kid]
                    .clone()
                    .into_shape_with_order((co, ci * kh * kw))
                    .unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dk = Array2::<f64>::zeros((co, ci * kh * kw));
                let mut dx = vec![0.0f64; b * sample];
                for bi in 0..b {
                    let col = im2col(
                        &x_flat[bi * sample..(bi + 1) * sample],
                        ci,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        pad,
                    );
                    let go = g4
                        .index_axis(ndarray::Axis(0), bi)
                        .to_owned()
                        .into_shape_with_order((co, ho * wo))
                        .unwrap();
                    dk += &go.dot(&col.t());
                    let dcol = k2.t().dot(&go);
                    col2im(
                        &dcol,
                        ci,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        pad,
                        &mut dx[bi * sample..(bi + 1) * sample],
                    );
                }
                let dx = ArrayD::from_shape_vec(ndarray::IxDyn(&[b, ci, h, w]), dx).unwrap();
                let dk = dk
                    .into_shape_with_order((co, ci, kh, kw))
                    .unwrap()
                    .into_dyn();
                vec![dx, dk]
            }),
        )
    }

    /// Nearest-neighbour x2 upsampling of `[B,C,H,W]`.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xs = self.values[x.0].shape().to_vec();
        assert_eq!(xs.len(), 4, "upsample_nearest2: input must be [B,C,H,W]");
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.values[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let mut out = Array4::<f64>::zeros((b, c, 2 * h, 2 * w));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = xv[[bi, ci, i, j]];
                        out[[bi, ci, 2 * i, 2 * j]] = v;
                        out[[bi, ci, 2 * i, 2 * j + 1]] = v;
                        out[[bi, ci, 2 * i + 1, 2 * j]] = v;
                        out[[bi, ci, 2 * i + 1, 2 * j + 1]] = v;
                    }
                }
            }
        }
        self.push_op(
            out.into_dyn(),
            vec![x.0],
            Box::new(move |_, g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx[[bi, ci, i, j]] = g4[[bi, ci, 2 * i, 2 * j]]
                                    + g4[[bi, ci, 2 * i, 2 * j + 1]]
                                    + g4[[bi, ci, 2 * i + 1, 2 * j]]
                                    + g4[[bi, ci, 2 * i + 1, 2 * j + 1]];
                            }
                        }
                    }
                }
                vec![dx.into_dyn()]
            }),
        )
    }
}
