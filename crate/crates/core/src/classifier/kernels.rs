//! Single-sample forward/backward kernels over flat CHW buffers.

use super::spec::Shape;
use super::Scalar;

/// Valid convolution, stride 1. `weight` is `[out][in][k][k]`.
pub(crate) fn conv_forward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    out: &mut [T],
) {
    let (ic_n, h, w) = (in_shape.channels, in_shape.height, in_shape.width);
    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
    for (oc, out_plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        out_plane.fill(bias[oc]);
        for ic in 0..ic_n {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weight[((oc * ic_n + ic) * kernel + ky) * kernel + kx];
                    for y in 0..oh {
                        let src = &in_plane[(y + ky) * w + kx..][..ow];
                        let dst = &mut out_plane[y * ow..][..ow];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients (when given) and writes the input gradient (when given).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    weight: &[T],
    kernel: usize,
    grad_out: &[T],
    param_grads: Option<(&mut [T], &mut [T])>,
    grad_in: Option<&mut [T]>,
) {
    let (ic_n, h, w) = (in_shape.channels, in_shape.height, in_shape.width);
    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
    let oc_n = grad_out.len() / (oh * ow);

    if let Some((gw, gb)) = param_grads {
        for oc in 0..oc_n {
            let g_plane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            gb[oc] += g_plane.iter().copied().fold(T::zero(), |a, b| a + b);
            for ic in 0..ic_n {
                let in_plane = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let mut acc = T::zero();
                        for y in 0..oh {
                            let src = &in_plane[(y + ky) * w + kx..][..ow];
                            let g = &g_plane[y * ow..][..ow];
                            for (&s, &gv) in src.iter().zip(g) {
                                acc += s * gv;
                            }
                        }
                        gw[((oc * ic_n + ic) * kernel + ky) * kernel + kx] += acc;
                    }
                }
            }
        }
    }

    if let Some(gin) = grad_in {
        gin.fill(T::zero());
        for oc in 0..oc_n {
            let g_plane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..ic_n {
                let gin_plane = &mut gin[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let wv = weight[((oc * ic_n + ic) * kernel + ky) * kernel + kx];
                        for y in 0..oh {
                            let dst = &mut gin_plane[(y + ky) * w + kx..][..ow];
                            let g = &g_plane[y * ow..][..ow];
                            for (d, &gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling; records the flat input index of each maximum.
pub(crate) fn maxpool_forward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    size: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (c_n, h, w) = (in_shape.channels, in_shape.height, in_shape.width);
    let (oh, ow) = (h / size, w / size);
    for c in 0..c_n {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = c * h * w + (y * size) * w + x * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = c * h * w + (y * size + dy) * w + x * size + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(grad_out: &[T], argmax: &[usize], grad_in: &mut [T]) {
    grad_in.fill(T::zero());
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_in[idx] += g;
    }
}

/// `weight` is `[out][in]`.
pub(crate) fn dense_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let n_in = input.len();
    for (o, (dst, &b)) in out.iter_mut().zip(bias).enumerate() {
        let row = &weight[o * n_in..(o + 1) * n_in];
        *dst = row.iter().zip(input).fold(b, |acc, (&wv, &x)| acc + wv * x);
    }
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    param_grads: Option<(&mut [T], &mut [T])>,
    grad_in: Option<&mut [T]>,
) {
    let n_in = input.len();
    if let Some((gw, gb)) = param_grads {
        for (o, &g) in grad_out.iter().enumerate() {
            gb[o] += g;
            for (d, &x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                *d += g * x;
            }
        }
    }
    if let Some(gin) = grad_in {
        gin.fill(T::zero());
        for (o, &g) in grad_out.iter().enumerate() {
            for (d, &wv) in gin.iter_mut().zip(&weight[o * n_in..(o + 1) * n_in]) {
                *d += wv * g;
            }
        }
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Cross-entropy of the softmax of `logits` against class `target`, via log-sum-exp.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits
        .iter()
        .map(|&z| (z - max).exp())
        .fold(T::zero(), |a, b| a + b)
        .ln()
        + max;
    lse - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_naive() {
        let shape = Shape::new(2, 4, 5);
        let input: Vec<f64> = (0..shape.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let k = 3;
        let oc_n = 2;
        let weight: Vec<f64> = (0..oc_n * 2 * k * k).map(|i| (i as f64 * 0.11).cos()).collect();
        let bias = vec![0.5, -0.25];
        let (oh, ow) = (2, 3);
        let mut out = vec![0.0; oc_n * oh * ow];
        conv_forward(&input, shape, &weight, &bias, k, &mut out);
        for oc in 0..oc_n {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..2 {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc +=
                                    weight[((oc * 2 + ic) * k + ky) * k + kx] * input[ic * 20 + (y + ky) * 5 + x + kx];
                            }
                        }
                    }
                    assert!((out[(oc * oh + y) * ow + x] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_maxima() {
        let input = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0];
        let mut out = [0.0; 2];
        let mut arg = [0; 2];
        maxpool_forward(&input, Shape::new(1, 2, 4), 2, &mut out, &mut arg);
        assert_eq!(out, [5.0, 9.0]);
        assert_eq!(arg, [1, 7]);
        let mut gin = [0.0; 8];
        maxpool_backward(&[1.0, 2.0], &arg, &mut gin);
        assert_eq!(gin, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_and_loss() {
        let mut p = [0.0; 3];
        softmax(&[1000.0f64, 1000.0, 1000.0], &mut p);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        let loss = cross_entropy(&[0.0f64, 0.0], 1);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }
}
