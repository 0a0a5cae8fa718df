//! Layer primitives with explicit backward passes. Feature maps are `(channels, height, width)`.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// `floor((input + 2·pad − k) / stride) + 1`.
pub fn conv_output_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::invalid("kernel size and stride must be positive"));
    }
    if input + 2 * pad < k {
        return Err(Error::shape(format!("extent >= {k}"), input + 2 * pad));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn padded(&self, pad: usize) -> (usize, usize) {
        (self.h + 2 * pad, self.w + 2 * pad)
    }
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvDims> {
    x.expect_rank(3, "input")?;
    kernel.expect_rank(4, "kernel")?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kc, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    if kc != c {
        return Err(Error::shape(format!("kernel with {c} input channels"), kc));
    }
    Ok(ConvDims {
        c,
        h,
        w,
        o,
        kh,
        kw,
        oh: conv_output_dim(h, kh, stride, pad)?,
        ow: conv_output_dim(w, kw, stride, pad)?,
    })
}

fn pad_input<T: Scalar>(x: &[T], d: &ConvDims, pad: usize) -> Vec<T> {
    if pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = d.padded(pad);
    let mut out = vec![T::zero(); d.c * hp * wp];
    for ch in 0..d.c {
        for y in 0..d.h {
            let src = &x[(ch * d.h + y) * d.w..][..d.w];
            out[(ch * hp + y + pad) * wp + pad..][..d.w].copy_from_slice(src);
        }
    }
    out
}

/// Cross-correlation of `x (C,H,W)` with `kernel (O,C,kh,kw)` plus per-channel `bias`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, kernel, stride, pad)?;
    if bias.len() != d.o {
        return Err(Error::shape(format!("{} biases", d.o), bias.len()));
    }
    let xp = pad_input(x.data(), &d, pad);
    let (hp, wp) = d.padded(pad);
    let k = kernel.data();
    let plane = d.oh * d.ow;
    let mut out = vec![T::zero(); d.o * plane];
    for oc in 0..d.o {
        let dst_plane = &mut out[oc * plane..][..plane];
        dst_plane.fill(bias[oc]);
        for ic in 0..d.c {
            let src_plane = &xp[ic * hp * wp..][..hp * wp];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = k[((oc * d.c + ic) * d.kh + ky) * d.kw + kx];
                    for oy in 0..d.oh {
                        let src = &src_plane[(oy * stride + ky) * wp + kx..];
                        let dst = &mut dst_plane[oy * d.ow..][..d.ow];
                        if stride == 1 {
                            for (o, &v) in dst.iter_mut().zip(&src[..d.ow]) {
                                *o += wv * v;
                            }
                        } else {
                            for (ox, o) in dst.iter_mut().enumerate() {
                                *o += wv * src[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.o, d.oh, d.ow], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients of a [`conv2d_forward`] call given the upstream gradient `grad_out (O,oh,ow)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(x, kernel, grad_out, stride, pad, true)
}

pub(crate) fn conv2d_backward_impl<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(x, kernel, stride, pad)?;
    if grad_out.shape() != [d.o, d.oh, d.ow] {
        return Err(Error::shape(
            format!("{:?}", [d.o, d.oh, d.ow]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let xp = pad_input(x.data(), &d, pad);
    let (hp, wp) = d.padded(pad);
    let k = kernel.data();
    let g = grad_out.data();
    let plane = d.oh * d.ow;
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); d.o];
    let mut gxp = if want_input { vec![T::zero(); xp.len()] } else { Vec::new() };

    for oc in 0..d.o {
        let g_plane = &g[oc * plane..][..plane];
        gb[oc] = g_plane.iter().copied().sum();
        for ic in 0..d.c {
            let base = ic * hp * wp;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let ki = ((oc * d.c + ic) * d.kh + ky) * d.kw + kx;
                    let wv = k[ki];
                    let mut acc = T::zero();
                    for oy in 0..d.oh {
                        let off = base + (oy * stride + ky) * wp + kx;
                        let gr = &g_plane[oy * d.ow..][..d.ow];
                        if stride == 1 {
                            acc += dot(gr, &xp[off..][..d.ow]);
                            if want_input {
                                for (dst, &gv) in gxp[off..][..d.ow].iter_mut().zip(gr) {
                                    *dst += wv * gv;
                                }
                            }
                        } else {
                            for (ox, &gv) in gr.iter().enumerate() {
                                acc += gv * xp[off + ox * stride];
                                if want_input {
                                    gxp[off + ox * stride] += wv * gv;
                                }
                            }
                        }
                    }
                    gk[ki] = acc;
                }
            }
        }
    }

    let input = if want_input {
        let mut gx = vec![T::zero(); d.c * d.h * d.w];
        for ch in 0..d.c {
            for y in 0..d.h {
                let src = &gxp[(ch * hp + y + pad) * wp + pad..][..d.w];
                gx[(ch * d.h + y) * d.w..][..d.w].copy_from_slice(src);
            }
        }
        Some(Tensor::new(vec![d.c, d.h, d.w], gx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: gb,
    })
}

/// 2×2 max pooling with stride 2; a trailing odd row or column is dropped. Returns the
/// pooled map and, per output cell, the flat input index of its maximum (first one wins).
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    x.expect_rank(3, "input")?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h < 2 || w < 2 {
        return Err(Error::shape("spatial dims >= 2", format!("{h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

/// Routes each output gradient back to the input cell that won its window.
pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(argmax.len(), grad_out.len()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let n = gx.len();
    let data = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        if i >= n {
            return Err(Error::invalid("pooling index out of range"));
        }
        data[i] += g;
    }
    Ok(gx)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(y.data_mut());
    y
}

pub(crate) fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for e in v {
        if !(*e > T::zero()) {
            *e = T::zero();
        }
    }
}

/// Passes `grad` where the forward output was positive.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad.shape() {
        return Err(Error::shape(format!("{:?}", output.shape()), format!("{:?}", grad.shape())));
    }
    let mut g = grad.clone();
    relu_mask(output.data(), g.data_mut());
    Ok(g)
}

pub(crate) fn relu_mask<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (gv, &y) in grad.iter_mut().zip(output) {
        if !(y > T::zero()) {
            *gv = T::zero();
        }
    }
}

fn dense_check<T: Scalar>(x: &[T], weights: &Tensor<T>) -> Result<(usize, usize)> {
    weights.expect_rank(2, "weight matrix")?;
    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
    if x.len() != inp {
        return Err(Error::Dimension {
            expected: inp,
            got: x.len(),
        });
    }
    Ok((out, inp))
}

/// `y = W·x + b` with `W` of shape `(out, in)`.
pub fn dense_forward<T: Scalar>(x: &[T], weights: &Tensor<T>, bias: &[T]) -> Result<Vec<T>> {
    let (out, inp) = dense_check(x, weights)?;
    if bias.len() != out {
        return Err(Error::shape(format!("{out} biases"), bias.len()));
    }
    let w = weights.data();
    Ok((0..out).map(|o| dot(&w[o * inp..][..inp], x) + bias[o]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Vec<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Scalar>(x: &[T], weights: &Tensor<T>, grad_out: &[T]) -> Result<DenseGrads<T>> {
    let (out, inp) = dense_check(x, weights)?;
    if grad_out.len() != out {
        return Err(Error::shape(out, grad_out.len()));
    }
    let w = weights.data();
    let mut gx = vec![T::zero(); inp];
    let mut gw = vec![T::zero(); w.len()];
    for (o, &g) in grad_out.iter().enumerate() {
        let row = &w[o * inp..][..inp];
        let grow = &mut gw[o * inp..][..inp];
        for i in 0..inp {
            grow[i] = g * x[i];
            gx[i] += g * row[i];
        }
    }
    Ok(DenseGrads {
        input: gx,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: grad_out.to_vec(),
    })
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot`.
pub(crate) fn cross_entropy_single<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!("label {label} outside 0..{}", logits.len())));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((lse - logits[label], grad))
}

/// Mean softmax cross-entropy over a `(batch, classes)` logit matrix, with gradient
/// `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_rank(2, "logit matrix")?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::shape(format!("{b} labels"), labels.len()));
    }
    if b == 0 {
        return Err(Error::EmptyInput);
    }
    let scale = T::one() / T::of(b as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(b * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let (l, g) = cross_entropy_single(row, label)?;
        loss += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((loss * scale, Tensor::new(vec![b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (w + 2 * p - kw) / s + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += k.at(&[oc, ic, ky, kx]) * x.at(&[ic, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_and_constant() {
        let x = Tensor::from_fn(&[1, 4, 5], |i| i as f64);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, &[0.0], 1, 0).unwrap(), x);

        let c = Tensor::from_fn(&[1, 5, 6], |_| 2.5);
        let ones = Tensor::from_fn(&[1, 1, 3, 3], |_| 1.0);
        let y = conv2d_forward(&c, &ones, &[0.0], 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 6]);
        for r in 1..4 {
            for col in 1..5 {
                assert_eq!(y.at(&[0, r, col]), 22.5);
            }
        }
        assert_eq!(y.at(&[0, 0, 0]), 10.0);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (s, p) in [(1, 1), (1, 0), (2, 1), (3, 2)] {
            let x = random(&[3, 9, 11], &mut rng);
            let k = random(&[4, 3, 3, 3], &mut rng);
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&x, &k, &b, s, p).unwrap();
            let slow = naive_conv(&x, &k, &b, s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &k, &[0.0], 1, 1), Err(Error::Shape { .. })));
        let k = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_forward(&x, &k, &[0.0, 1.0], 1, 1).is_err());
        assert_eq!(conv_output_dim(7, 3, 2, 1).unwrap(), 4);
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::from_fn(&[2, 6, 7], |_| 0.3);
        let (y, _) = maxpool2d(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.3));

        let ramp = Tensor::from_fn(&[1, 5, 8], |i| i as f64);
        let (y, _) = maxpool2d(&ramp).unwrap();
        for oy in 0..2 {
            for ox in 0..4 {
                assert_eq!(y.at(&[0, oy, ox]), ramp.at(&[0, 2 * oy + 1, 2 * ox + 1]));
            }
        }
        assert!(maxpool2d(&Tensor::<f64>::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y), y);
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = Tensor::new(vec![2, 4], vec![0.0; 8]).unwrap();
        let (l, g) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((g.at(&[0, 0]) - (0.25 - 1.0) / 2.0).abs() < 1e-15);

        let sure = Tensor::new(vec![1, 4], vec![0.0, 20.0, 0.0, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&sure, &[1]).unwrap().0 < 1e-6);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 4]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }
}
