//! Time-distributed convolution, max pooling, ReLU and the dense head, each
//! with a hand-derived backward pass.
//!
//! Tensors are channels-last: an image stack is [T, H, W, C], convolution
//! weights are [KH, KW, Cin, Cout]. Same-padding follows the ceil(H/stride)
//! convention with any odd padding going to the bottom/right edge.

use crate::neural::tensor::{Scalar, Tensor};
use crate::{CoreError, Result};

pub const KERNEL: usize = 3;

/// Output extent and leading pad for same-padding at the given stride.
#[inline]
pub fn same_padding(extent: usize, stride: usize) -> (usize, i64) {
    let out = extent.div_ceil(stride);
    let pad_total = ((out - 1) * stride + KERNEL).saturating_sub(extent);
    (out, (pad_total / 2) as i64)
}

fn conv_shape_err(layer: &str, expected: String, got: &[usize]) -> CoreError {
    CoreError::ShapeMismatch {
        layer: layer.to_string(),
        expected,
        got: format!("{got:?}"),
    }
}

/// 3x3 convolution applied independently to each time step.
///
/// x: [T, H, W, Cin], weights: [3, 3, Cin, Cout], bias: [Cout]
/// -> [T, ceil(H/s), ceil(W/s), Cout]
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    layer: &str,
) -> Result<Tensor<T>> {
    let [t_steps, h, w, cin] = x.shape() else {
        return Err(conv_shape_err(layer, "[T, H, W, Cin]".into(), x.shape()));
    };
    let (t_steps, h, w, cin) = (*t_steps, *h, *w, *cin);
    match weights.shape() {
        [KERNEL, KERNEL, wc, _] if *wc == cin => {}
        other => {
            return Err(conv_shape_err(
                layer,
                format!("[3, 3, {cin}, Cout]"),
                other,
            ))
        }
    }
    let cout = weights.shape()[3];
    if bias.shape() != [cout] {
        return Err(conv_shape_err(layer, format!("[{cout}]"), bias.shape()));
    }
    let (out_h, pad_top) = same_padding(h, stride);
    let (out_w, pad_left) = same_padding(w, stride);

    let mut out = Tensor::zeros(&[t_steps, out_h, out_w, cout]);
    let xd = x.data();
    let wd = weights.data();
    let bd = bias.data();
    let od = out.data_mut();
    let frame_in = h * w * cin;
    let frame_out = out_h * out_w * cout;
    for t in 0..t_steps {
        let xf = &xd[t * frame_in..(t + 1) * frame_in];
        let of = &mut od[t * frame_out..(t + 1) * frame_out];
        for oh in 0..out_h {
            let ih0 = (oh * stride) as i64 - pad_top;
            for ow in 0..out_w {
                let iw0 = (ow * stride) as i64 - pad_left;
                let out_off = (oh * out_w + ow) * cout;
                let acc = &mut of[out_off..out_off + cout];
                acc.copy_from_slice(bd);
                for kh in 0..KERNEL {
                    let ih = ih0 + kh as i64;
                    if ih < 0 || ih >= h as i64 {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let iw = iw0 + kw as i64;
                        if iw < 0 || iw >= w as i64 {
                            continue;
                        }
                        let x_off = ((ih as usize) * w + iw as usize) * cin;
                        let w_off = (kh * KERNEL + kw) * cin * cout;
                        for ci in 0..cin {
                            let xv = xf[x_off + ci];
                            let wrow = &wd[w_off + ci * cout..w_off + (ci + 1) * cout];
                            for (a, wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * *wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weights and bias. `dx` is
/// skipped when `need_dx` is false (first layer).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (t_steps, h, w, cin) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let cout = weights.shape()[3];
    let (out_h, pad_top) = same_padding(h, stride);
    let (out_w, pad_left) = same_padding(w, stride);
    debug_assert_eq!(dy.shape(), &[t_steps, out_h, out_w, cout]);

    let mut dw = Tensor::zeros(&[KERNEL, KERNEL, cin, cout]);
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(&[t_steps, h, w, cin]));

    let xd = x.data();
    let wd = weights.data();
    let dyd = dy.data();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    let frame_in = h * w * cin;
    let frame_out = out_h * out_w * cout;
    for t in 0..t_steps {
        let xf = &xd[t * frame_in..(t + 1) * frame_in];
        let dyf = &dyd[t * frame_out..(t + 1) * frame_out];
        let dxf = dx
            .as_mut()
            .map(|d| &mut d.data_mut()[t * frame_in..(t + 1) * frame_in]);
        let mut dxf = dxf;
        for oh in 0..out_h {
            let ih0 = (oh * stride) as i64 - pad_top;
            for ow in 0..out_w {
                let iw0 = (ow * stride) as i64 - pad_left;
                let g = &dyf[(oh * out_w + ow) * cout..(oh * out_w + ow + 1) * cout];
                for (b, gv) in dbd.iter_mut().zip(g) {
                    *b += *gv;
                }
                for kh in 0..KERNEL {
                    let ih = ih0 + kh as i64;
                    if ih < 0 || ih >= h as i64 {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let iw = iw0 + kw as i64;
                        if iw < 0 || iw >= w as i64 {
                            continue;
                        }
                        let x_off = ((ih as usize) * w + iw as usize) * cin;
                        let w_off = (kh * KERNEL + kw) * cin * cout;
                        for ci in 0..cin {
                            let xv = xf[x_off + ci];
                            let dwrow = &mut dwd[w_off + ci * cout..w_off + (ci + 1) * cout];
                            for (d, gv) in dwrow.iter_mut().zip(g) {
                                *d += xv * *gv;
                            }
                            if let Some(dxf) = dxf.as_mut() {
                                let wrow = &wd[w_off + ci * cout..w_off + (ci + 1) * cout];
                                let mut acc = T::zero();
                                for (wv, gv) in wrow.iter().zip(g) {
                                    acc += *wv * *gv;
                                }
                                dxf[x_off + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2x2 max pooling with stride 2, applied per time step. Returns the pooled
/// tensor and the flat input index of each max (ties go to the first maximal
/// element in scan order), which routes the backward pass.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (t_steps, h, w, c) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let out_h = h / 2;
    let out_w = w / 2;
    assert!(out_h >= 1 && out_w >= 1, "pooling collapsed a dimension");
    let mut out = Tensor::zeros(&[t_steps, out_h, out_w, c]);
    let mut argmax = vec![0u32; out.len()];
    let xd = x.data();
    let od = out.data_mut();
    for t in 0..t_steps {
        let base_in = t * h * w * c;
        let base_out = t * out_h * out_w * c;
        for oh in 0..out_h {
            for ow in 0..out_w {
                for ch in 0..c {
                    let mut best_idx = base_in + ((oh * 2) * w + ow * 2) * c + ch;
                    let mut best = xd[best_idx];
                    for (dh, dw_) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = base_in + ((oh * 2 + dh) * w + (ow * 2 + dw_)) * c + ch;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    let out_idx = base_out + (oh * out_w + ow) * c + ch;
                    od[out_idx] = best;
                    argmax[out_idx] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

/// Routes pooled gradients back to the argmax positions.
pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (g, idx) in dy.data().iter().zip(argmax) {
        dxd[*idx as usize] += *g;
    }
    dx
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// ReLU gradient masked by the forward output (derivative 0 at exactly 0).
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, dy: &mut Tensor<T>) {
    debug_assert_eq!(output.shape(), dy.shape());
    for (g, o) in dy.data_mut().iter_mut().zip(output.data()) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Linear head: w·x + b with a single output neuron.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: T) -> Result<T> {
    if x.shape() != weights.shape() {
        return Err(CoreError::ShapeMismatch {
            layer: "dense".into(),
            expected: format!("{:?}", weights.shape()),
            got: format!("{:?}", x.shape()),
        });
    }
    let mut acc = bias;
    for (xv, wv) in x.data().iter().zip(weights.data()) {
        acc += *xv * *wv;
    }
    Ok(acc)
}

/// Gradients of the dense head: (dx, dw, db) for upstream gradient `d`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    d: T,
) -> (Tensor<T>, Tensor<T>, T) {
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weights.shape());
    for i in 0..x.len() {
        dx.data_mut()[i] = weights.data()[i] * d;
        dw.data_mut()[i] = x.data()[i] * d;
    }
    (dx, dw, d)
}
