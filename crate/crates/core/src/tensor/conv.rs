//! 2-D convolution and its transpose, lowered to GEMM through im2col.
//!
//! Convolution is cross-correlation (no kernel flip). Weights of `conv2d`
//! are `(out_c, in_c, k, k)`; weights of `conv_transpose2d` are
//! `(in_c, out_c, k, k)` so that the same tensor drives a convolution and
//! its exact adjoint.

use super::gemm::gemm;
use super::graph::{Node, Op};
use super::{Graph, Result, Shape, Tensor, TensorError, Var};

/// `floor((size + 2*padding - k) / stride) + 1`, or `None` if not positive.
pub fn conv2d_output_size(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// `(size - 1) * stride - 2*padding + k`, or `None` if not positive.
pub fn conv_transpose2d_output_size(
    size: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let out = (size as i64 - 1) * stride as i64 - 2 * padding as i64 + k as i64;
    (size >= 1 && stride >= 1 && out >= 1).then_some(out as usize)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn im2col(src: &[f64], g: Geometry, cols: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &src[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.w as isize {
                            srow[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
fn col2im(cols: &[f64], g: Geometry, dst: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[(ci * g.h + iy as usize) * g.w..][..g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(g: &Graph, bias: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        let n = g.shape(b).numel();
        if n != channels {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "bias length",
                got: n,
                expected: channels,
            });
        }
    }
    Ok(())
}

fn square_kernel(ws: Shape, op: &'static str) -> Result<usize> {
    if ws.h != ws.w {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "kernel width",
            got: ws.w,
            expected: ws.h,
        });
    }
    Ok(ws.h)
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(gy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for (i, chunk) in gy.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    db
}

impl Graph {
    /// Strided, zero-padded 2-D cross-correlation.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let k = square_kernel(ws, OP)?;
        if xs.c != ws.c {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "input channels",
                got: xs.c,
                expected: ws.c,
            });
        }
        check_bias(self, bias, ws.n, OP)?;
        let oh =
            conv2d_output_size(xs.h, k, stride, padding).ok_or(TensorError::NonPositiveOutput {
                op: OP,
                dim: "height",
                got: (xs.h as i64 + 2 * padding as i64 - k as i64) / stride.max(1) as i64 + 1,
            })?;
        let ow =
            conv2d_output_size(xs.w, k, stride, padding).ok_or(TensorError::NonPositiveOutput {
                op: OP,
                dim: "width",
                got: (xs.w as i64 + 2 * padding as i64 - k as i64) / stride.max(1) as i64 + 1,
            })?;
        let geo = Geometry {
            channels: xs.c,
            h: xs.h,
            w: xs.w,
            k,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let kdim = xs.c * k * k;
        let p = oh * ow;
        let oc = ws.n;
        let out_shape = Shape::new(xs.n, oc, oh, ow);
        let mut out = vec![0.0; out_shape.numel()];
        let mut cols = vec![0.0; kdim * p];
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let in_per = xs.c * xs.plane();
        for (b, out_b) in out.chunks_mut(oc * p).enumerate() {
            im2col(&x[b * in_per..(b + 1) * in_per], geo, &mut cols);
            gemm(oc, kdim, p, w, false, &cols, false, 0.0, out_b);
        }
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), p);
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Conv2d { stride, padding },
            inputs,
        ))
    }

    /// Transposed convolution: the adjoint of [`Graph::conv2d`] with the
    /// same weight tensor, plus an optional bias.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let k = square_kernel(ws, OP)?;
        if xs.c != ws.n {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "input channels",
                got: xs.c,
                expected: ws.n,
            });
        }
        let oc = ws.c;
        check_bias(self, bias, oc, OP)?;
        let size = |s: usize, dim| {
            conv_transpose2d_output_size(s, k, stride, padding).ok_or(
                TensorError::NonPositiveOutput {
                    op: OP,
                    dim,
                    got: (s as i64 - 1) * stride as i64 - 2 * padding as i64 + k as i64,
                },
            )
        };
        let oh = size(xs.h, "height")?;
        let ow = size(xs.w, "width")?;
        let geo = Geometry {
            channels: oc,
            h: oh,
            w: ow,
            k,
            stride,
            pad: padding,
            oh: xs.h,
            ow: xs.w,
        };
        let kdim = oc * k * k;
        let p = xs.plane();
        let out_shape = Shape::new(xs.n, oc, oh, ow);
        let mut out = vec![0.0; out_shape.numel()];
        let mut cols = vec![0.0; kdim * p];
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let out_per = oc * oh * ow;
        for (b, out_b) in out.chunks_mut(out_per).enumerate() {
            let x_b = &x[b * xs.c * p..(b + 1) * xs.c * p];
            gemm(kdim, xs.c, p, w, true, x_b, false, 0.0, &mut cols);
            col2im(&cols, geo, out_b);
        }
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), oh * ow);
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::ConvTranspose2d { stride, padding },
            inputs,
        ))
    }
}

pub(crate) fn conv2d_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
    stride: usize,
    padding: usize,
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let ws = g.shape(node.inputs[1]);
    let ys = node.value.shape();
    let k = ws.h;
    let geo = Geometry {
        channels: xs.c,
        h: xs.h,
        w: xs.w,
        k,
        stride,
        pad: padding,
        oh: ys.h,
        ow: ys.w,
    };
    let kdim = xs.c * k * k;
    let p = ys.plane();
    let oc = ws.n;
    let x = g.value(node.inputs[0]).data();
    let w = g.value(node.inputs[1]).data();
    let in_per = xs.c * xs.plane();
    let mut dx = need[0].then(|| vec![0.0; xs.numel()]);
    let mut dw = need[1].then(|| vec![0.0; ws.numel()]);
    let mut cols = vec![0.0; kdim * p];
    for b in 0..xs.n {
        let gy_b = &gy[b * oc * p..(b + 1) * oc * p];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_per..(b + 1) * in_per], geo, &mut cols);
            gemm(oc, p, kdim, gy_b, false, &cols, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(kdim, oc, p, w, true, gy_b, false, 0.0, &mut cols);
            col2im(&cols, geo, &mut dx[b * in_per..(b + 1) * in_per]);
        }
    }
    let mut out = vec![dx, dw];
    if node.inputs.len() > 2 {
        out.push(need[2].then(|| bias_grad(gy, oc, p)));
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    g: &Graph,
    node: &Node,
    gy: &[f64],
    need: &[bool],
    stride: usize,
    padding: usize,
) -> Vec<Option<Vec<f64>>> {
    let xs = g.shape(node.inputs[0]);
    let ws = g.shape(node.inputs[1]);
    let ys = node.value.shape();
    let k = ws.h;
    let oc = ws.c;
    let geo = Geometry {
        channels: oc,
        h: ys.h,
        w: ys.w,
        k,
        stride,
        pad: padding,
        oh: xs.h,
        ow: xs.w,
    };
    let kdim = oc * k * k;
    let p = xs.plane();
    let x = g.value(node.inputs[0]).data();
    let w = g.value(node.inputs[1]).data();
    let out_per = oc * ys.plane();
    let mut dx = need[0].then(|| vec![0.0; xs.numel()]);
    let mut dw = need[1].then(|| vec![0.0; ws.numel()]);
    let mut cols = vec![0.0; kdim * p];
    for b in 0..xs.n {
        im2col(&gy[b * out_per..(b + 1) * out_per], geo, &mut cols);
        if let Some(dx) = dx.as_mut() {
            gemm(
                xs.c,
                kdim,
                p,
                w,
                false,
                &cols,
                false,
                0.0,
                &mut dx[b * xs.c * p..(b + 1) * xs.c * p],
            );
        }
        if let Some(dw) = dw.as_mut() {
            let x_b = &x[b * xs.c * p..(b + 1) * xs.c * p];
            gemm(xs.c, p, kdim, x_b, false, &cols, true, 1.0, dw);
        }
    }
    let mut out = vec![dx, dw];
    if node.inputs.len() > 2 {
        out.push(need[2].then(|| bias_grad(gy, oc, ys.plane())));
    }
    out
}
