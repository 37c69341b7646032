//! Elementwise, dense and reduction primitives.

use super::gemm::gemm;
use super::graph::{Node, Op};
use super::{Graph, Result, Shape, Tensor, TensorError, Var};

fn same_shape(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<Shape> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    for (dim, x, y) in [
        ("batch", sa.n, sb.n),
        ("channels", sa.c, sb.c),
        ("height", sa.h, sb.h),
        ("width", sa.w, sb.w),
    ] {
        if x != y {
            return Err(TensorError::ShapeMismatch {
                op,
                dim,
                got: y,
                expected: x,
            });
        }
    }
    Ok(sa)
}

impl Graph {
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| v.data()[i].max(0.0));
        self.push(out, Op::Relu, vec![x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = same_shape(self, a, b, "add")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(s, |i| x[i] + y[i]);
        Ok(self.push(out, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = same_shape(self, a, b, "sub")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(s, |i| x[i] - y[i]);
        Ok(self.push(out, Op::Sub, vec![a, b]))
    }

    /// Elementwise product with a constant array of the same size.
    pub fn scale_by(&mut self, x: Var, factors: &Tensor) -> Result<Var> {
        let s = self.shape(x);
        if factors.shape().numel() != s.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_by",
                dim: "element count",
                got: factors.shape().numel(),
                expected: s.numel(),
            });
        }
        let v = self.value(x).data();
        let f = factors.data();
        let out = Tensor::from_fn(s, |i| v[i] * f[i]);
        Ok(self.push(out, Op::ScaleBy(f.to_vec()), vec![x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape, vec![x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum, vec![x])
    }

    /// Fully connected layer: input `(n, c, h, w)` flattened to `n x (c*h*w)`,
    /// weight `(out, f, 1, 1)`, output `(n, out, 1, 1)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let f = xs.c * xs.plane();
        let wf = ws.c * ws.plane();
        if f != wf {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                dim: "features",
                got: f,
                expected: wf,
            });
        }
        let out_f = ws.n;
        if let Some(b) = bias {
            let n = self.shape(b).numel();
            if n != out_f {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    dim: "bias length",
                    got: n,
                    expected: out_f,
                });
            }
        }
        let mut out = vec![0.0; xs.n * out_f];
        gemm(
            xs.n,
            f,
            out_f,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            0.0,
            &mut out,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(out_f) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::new(Shape::new(xs.n, out_f, 1, 1), out)?,
            Op::Linear,
            inputs,
        ))
    }

    /// Batched matrix product over the last two axes. `(a, b, r, k)` times
    /// `(a, b, k, c)`, with optional transposition of either operand.
    pub fn matmul(&mut self, lhs: Var, rhs: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(lhs), self.shape(rhs));
        if (sa.n, sa.c) != (sb.n, sb.c) {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                dim: "batch",
                got: sb.n * sb.c,
                expected: sa.n * sa.c,
            });
        }
        let (r, k) = if trans_a { (sa.w, sa.h) } else { (sa.h, sa.w) };
        let (k2, c) = if trans_b { (sb.w, sb.h) } else { (sb.h, sb.w) };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                dim: "inner",
                got: k2,
                expected: k,
            });
        }
        let batches = sa.n * sa.c;
        let out_shape = Shape::new(sa.n, sa.c, r, c);
        let mut out = vec![0.0; out_shape.numel()];
        let a = self.value(lhs).data();
        let b = self.value(rhs).data();
        for i in 0..batches {
            gemm(
                r,
                k,
                c,
                &a[i * r * k..(i + 1) * r * k],
                trans_a,
                &b[i * k * c..(i + 1) * k * c],
                trans_b,
                0.0,
                &mut out[i * r * c..(i + 1) * r * c],
            );
        }
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MatMul { trans_a, trans_b },
            vec![lhs, rhs],
        ))
    }

    /// Softmax along the last axis, with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(s.w.max(1)) {
            softmax_in_place(row);
        }
        let t = Tensor::new(s, out).expect("shape preserved");
        self.push(t, Op::SoftmaxRows, vec![x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape();
        let plane = s.plane();
        let out: Vec<f64> = v
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(Shape::new(s.n, s.c, 1, 1), out).expect("pooled shape");
        self.push(t, Op::GlobalAvgPool, vec![x])
    }

    /// Per-sample affine mixing of channels: for every pixel vector `p` of
    /// batch element `i`, returns `W_i p + b_i`. `params` is
    /// `(n, c*c + c, 1, 1)` holding `W_i` row-major followed by `b_i`.
    pub fn channel_affine(&mut self, image: Var, params: Var) -> Result<Var> {
        let xs = self.shape(image);
        let ps = self.shape(params);
        let c = xs.c;
        let per = c * c + c;
        if ps.n != xs.n {
            return Err(TensorError::ShapeMismatch {
                op: "channel_affine",
                dim: "batch",
                got: ps.n,
                expected: xs.n,
            });
        }
        if ps.c * ps.plane() != per {
            return Err(TensorError::ShapeMismatch {
                op: "channel_affine",
                dim: "parameter count",
                got: ps.c * ps.plane(),
                expected: per,
            });
        }
        let plane = xs.plane();
        let x = self.value(image).data();
        let p = self.value(params).data();
        let mut out = vec![0.0; xs.numel()];
        for n in 0..xs.n {
            let prm = &p[n * per..(n + 1) * per];
            let src = &x[n * c * plane..(n + 1) * c * plane];
            let dst = &mut out[n * c * plane..(n + 1) * c * plane];
            for i in 0..c {
                let row = &mut dst[i * plane..(i + 1) * plane];
                row.fill(prm[c * c + i]);
                for j in 0..c {
                    let wij = prm[i * c + j];
                    let sj = &src[j * plane..(j + 1) * plane];
                    row.iter_mut().zip(sj).for_each(|(o, s)| *o += wij * s);
                }
            }
        }
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::ChannelAffine,
            vec![image, params],
        ))
    }

    /// Mean squared error over the elements where `mask` is nonzero.
    pub fn mse_loss(&mut self, pred: Var, target: Var, mask: Option<&Tensor>) -> Result<Var> {
        let s = same_shape(self, pred, target, "mse_loss")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let (total, count) = match mask {
            Some(m) => {
                if m.shape().numel() != s.numel() {
                    return Err(TensorError::ShapeMismatch {
                        op: "mse_loss",
                        dim: "mask size",
                        got: m.shape().numel(),
                        expected: s.numel(),
                    });
                }
                let md = m.data();
                let count: f64 = md.iter().filter(|&&v| v != 0.0).count() as f64;
                let total: f64 = (0..s.numel())
                    .filter(|&i| md[i] != 0.0)
                    .map(|i| (p[i] - t[i]) * (p[i] - t[i]))
                    .sum();
                (total, count)
            }
            None => (
                p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum(),
                s.numel() as f64,
            ),
        };
        if count == 0.0 {
            return Err(TensorError::EmptyMask);
        }
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::Mse {
                mask: mask.map(|m| m.data().to_vec()),
                count,
            },
            vec![pred, target],
        ))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn relu_backward(node: &Node, gy: &[f64]) -> Vec<Option<Vec<f64>>> {
    // The output is positive exactly where the input is, so it serves as the mask.
    let y = node.value.data();
    vec![Some(
        gy.iter()
            .zip(y)
            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
            .collect(),
    )]
}

pub(crate) fn linear_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let ws = g.shape(node.inputs[1]);
    let f = xs.c * xs.plane();
    let out_f = ws.n;
    let x = g.value(node.inputs[0]).data();
    let w = g.value(node.inputs[1]).data();
    let dx = need[0].then(|| {
        let mut dx = vec![0.0; xs.numel()];
        gemm(xs.n, out_f, f, gy, false, w, false, 0.0, &mut dx);
        dx
    });
    let dw = need[1].then(|| {
        let mut dw = vec![0.0; ws.numel()];
        gemm(out_f, xs.n, f, gy, true, x, false, 0.0, &mut dw);
        dw
    });
    let mut out = vec![dx, dw];
    if node.inputs.len() > 2 {
        out.push(need[2].then(|| {
            let mut db = vec![0.0; out_f];
            for row in gy.chunks(out_f) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
            }
            db
        }));
    }
    out
}

pub(crate) fn matmul_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
    ta: bool,
    tb: bool,
) -> Vec<Option<Vec<f64>>> {
    let sa = g.shape(node.inputs[0]);
    let sb = g.shape(node.inputs[1]);
    let a = g.value(node.inputs[0]).data();
    let b = g.value(node.inputs[1]).data();
    let (r, k) = if ta { (sa.w, sa.h) } else { (sa.h, sa.w) };
    let c = if tb { sb.h } else { sb.w };
    let batches = sa.n * sa.c;
    let mut da = need[0].then(|| vec![0.0; sa.numel()]);
    let mut db = need[1].then(|| vec![0.0; sb.numel()]);
    for i in 0..batches {
        let ai = &a[i * r * k..(i + 1) * r * k];
        let bi = &b[i * k * c..(i + 1) * k * c];
        let gi = &gy[i * r * c..(i + 1) * r * c];
        if let Some(da) = da.as_mut() {
            let dst = &mut da[i * r * k..(i + 1) * r * k];
            if ta {
                gemm(k, c, r, bi, tb, gi, true, 0.0, dst);
            } else {
                gemm(r, c, k, gi, false, bi, !tb, 0.0, dst);
            }
        }
        if let Some(db) = db.as_mut() {
            let dst = &mut db[i * k * c..(i + 1) * k * c];
            if tb {
                gemm(c, r, k, gi, true, ai, ta, 0.0, dst);
            } else {
                gemm(k, r, c, ai, !ta, gi, false, 0.0, dst);
            }
        }
    }
    vec![da, db]
}

pub(crate) fn softmax_rows_backward(node: &Node, gy: &[f64]) -> Vec<Option<Vec<f64>>> {
    let y = node.value.data();
    let w = node.value.shape().w.max(1);
    let mut dx = vec![0.0; y.len()];
    for ((d, yr), gr) in dx.chunks_mut(w).zip(y.chunks(w)).zip(gy.chunks(w)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((dv, yv), gv) in d.iter_mut().zip(yr).zip(gr) {
            *dv = yv * (gv - dot);
        }
    }
    vec![Some(dx)]
}

pub(crate) fn global_avg_pool_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let s = g.shape(node.inputs[0]);
    let plane = s.plane();
    let mut dx = vec![0.0; s.numel()];
    for (chunk, gv) in dx.chunks_mut(plane).zip(gy) {
        chunk.fill(gv / plane as f64);
    }
    vec![Some(dx)]
}

pub(crate) fn channel_affine_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let c = xs.c;
    let per = c * c + c;
    let plane = xs.plane();
    let x = g.value(node.inputs[0]).data();
    let p = g.value(node.inputs[1]).data();
    let mut dx = need[0].then(|| vec![0.0; xs.numel()]);
    let mut dp = need[1].then(|| vec![0.0; xs.n * per]);
    for n in 0..xs.n {
        let prm = &p[n * per..(n + 1) * per];
        let src = &x[n * c * plane..(n + 1) * c * plane];
        let gsrc = &gy[n * c * plane..(n + 1) * c * plane];
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[n * c * plane..(n + 1) * c * plane];
            for i in 0..c {
                let gi = &gsrc[i * plane..(i + 1) * plane];
                for j in 0..c {
                    let wij = prm[i * c + j];
                    dst[j * plane..(j + 1) * plane]
                        .iter_mut()
                        .zip(gi)
                        .for_each(|(d, g)| *d += wij * g);
                }
            }
        }
        if let Some(dp) = dp.as_mut() {
            let dst = &mut dp[n * per..(n + 1) * per];
            for i in 0..c {
                let gi = &gsrc[i * plane..(i + 1) * plane];
                for j in 0..c {
                    let sj = &src[j * plane..(j + 1) * plane];
                    dst[i * c + j] = gi.iter().zip(sj).map(|(a, b)| a * b).sum();
                }
                dst[c * c + i] = gi.iter().sum();
            }
        }
    }
    vec![dx, dp]
}

pub(crate) fn mse_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    mask: Option<&[f64]>,
    count: f64,
) -> Vec<Option<Vec<f64>>> {
    let p = g.value(node.inputs[0]).data();
    let t = g.value(node.inputs[1]).data();
    let scale = 2.0 * gy[0] / count;
    let dp: Vec<f64> = (0..p.len())
        .map(|i| match mask {
            Some(m) if m[i] == 0.0 => 0.0,
            _ => scale * (p[i] - t[i]),
        })
        .collect();
    let dt = dp.iter().map(|v| -v).collect();
    vec![Some(dp), Some(dt)]
}
