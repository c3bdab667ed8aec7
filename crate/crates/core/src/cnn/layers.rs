//! Forward and backward passes of the individual layers.
//!
//! Feature maps are `(batch, channels, height, width)`; dense activations
//! are `(batch, features)`. Work is split per sample (forward, input
//! gradients) or per output unit (parameter gradients); every reduction runs
//! in a fixed sequential order, so results do not depend on the thread count.

use rand::Rng as _;
use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // Four partial sums break the dependency chain so the loop vectorizes.
    let mut acc = [T::zero(); 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = T::zero();
    for (&a, &b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unrolls one `(C, H, W)` sample into a `(C*k*k, H*W)` matrix of
/// zero-padded neighbourhoods.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let p = h * w;
    col.fill(T::zero());
    for ci in 0..c {
        let plane = &x[ci * p..(ci + 1) * p];
        for i in 0..k {
            for j in 0..k {
                let row = &mut col[((ci * k + i) * k + j) * p..][..p];
                let dy = i as isize - pad;
                let dx = j as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into a sample.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let p = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * p..(ci + 1) * p];
        for i in 0..k {
            for j in 0..k {
                let row = &col[((ci * k + i) * k + j) * p..][..p];
                let dy = i as isize - pad;
                let dx = j as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, &s) in dst[sx0..sx0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    x.rank_check(4)?;
    kernels.rank_check(4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kc != c || kh != kw || kh % 2 == 0 || bias.len() != o {
        return Err(Error::Shape {
            expected: vec![bias.len(), c, kh, kh],
            actual: kernels.shape().to_vec(),
        });
    }
    if h == 0 || w == 0 {
        return Err(Error::Shape {
            expected: vec![b, c, 1, 1],
            actual: x.shape().to_vec(),
        });
    }
    Ok((b, c, h, w, o, kh))
}

/// Same-padded, stride-1 convolution (cross-correlation):
/// `out[b,o,y,x] = bias[o] + sum_{c,i,j} k[o,c,i,j] * x_pad[b,c,y+i-k/2,x+j-k/2]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (b, c, h, w, o, k) = conv_dims(x, kernels, bias)?;
    let p = h * w;
    let r = c * k * k;
    let mut out = Tensor::zeros(vec![b, o, h, w]);
    let kd = kernels.data();
    out.data_mut()
        .par_chunks_mut(o * p)
        .zip(x.data().par_chunks(c * p))
        .for_each_init(
            || vec![T::zero(); r * p],
            |col, (out_b, x_b)| {
                im2col(x_b, c, h, w, k, col);
                for oi in 0..o {
                    let dst = &mut out_b[oi * p..(oi + 1) * p];
                    dst.fill(bias[oi]);
                    let krow = &kd[oi * r..(oi + 1) * r];
                    for (ri, &kv) in krow.iter().enumerate() {
                        if kv != T::zero() {
                            axpy(kv, &col[ri * p..(ri + 1) * p], dst);
                        }
                    }
                }
            },
        );
    Ok(out)
}

pub struct ConvGrads<T> {
    /// Gradient w.r.t. the input, when requested.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let bias_stub = vec![T::zero(); kernels.shape().first().copied().unwrap_or(0)];
    let (b, c, h, w, o, k) = conv_dims(x, kernels, &bias_stub)?;
    if grad_out.shape() != [b, o, h, w] {
        return Err(Error::Shape {
            expected: vec![b, o, h, w],
            actual: grad_out.shape().to_vec(),
        });
    }
    let p = h * w;
    let r = c * k * k;
    let mut cols = vec![T::zero(); b * r * p];
    cols.par_chunks_mut(r * p)
        .zip(x.data().par_chunks(c * p))
        .for_each(|(col, x_b)| im2col(x_b, c, h, w, k, col));

    let g = grad_out.data();
    let mut dk = vec![T::zero(); o * r];
    let mut db = vec![T::zero(); o];
    dk.par_chunks_mut(r)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(oi, (dk_o, db_o))| {
            for bi in 0..b {
                let g_bo = &g[(bi * o + oi) * p..][..p];
                let col = &cols[bi * r * p..][..r * p];
                for (ri, d) in dk_o.iter_mut().enumerate() {
                    *d += dot(g_bo, &col[ri * p..(ri + 1) * p]);
                }
                *db_o += g_bo.iter().copied().sum::<T>();
            }
        });

    let input = if need_input_grad {
        let kd = kernels.data();
        let mut dx = Tensor::zeros(vec![b, c, h, w]);
        dx.data_mut()
            .par_chunks_mut(c * p)
            .zip(g.par_chunks(o * p))
            .for_each_init(
                || vec![T::zero(); r * p],
                |dcol, (dx_b, g_b)| {
                    dcol.fill(T::zero());
                    for oi in 0..o {
                        let g_bo = &g_b[oi * p..(oi + 1) * p];
                        for ri in 0..r {
                            let kv = kd[oi * r + ri];
                            if kv != T::zero() {
                                axpy(kv, g_bo, &mut dcol[ri * p..(ri + 1) * p]);
                            }
                        }
                    }
                    col2im(dcol, c, h, w, k, dx_b);
                },
            );
        Some(dx)
    } else {
        None
    };

    Ok(ConvGrads {
        input,
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: db,
    })
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given the layer's output (zero where inactive).
pub fn relu_backward<T: Scalar>(activated: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if activated.shape() != grad.shape() {
        return Err(Error::Shape {
            expected: activated.shape().to_vec(),
            actual: grad.shape().to_vec(),
        });
    }
    let data = activated
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape().to_vec(), data)
}

/// Non-overlapping 2x2 max pooling with floor division of odd sizes.
/// Returns the pooled map and, per output element, the flat input index of
/// the chosen maximum (first in row-major window order on ties).
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    x.rank_check(4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut arg = vec![0usize; b * c * oh * ow];
    let xd = x.data();
    for (plane, (out_p, arg_p)) in out
        .data_mut()
        .chunks_mut(oh * ow)
        .zip(arg.chunks_mut(oh * ow))
        .enumerate()
    {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out_p[oy * ow + ox] = xd[best];
                arg_p[oy * ow + ox] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape {
            expected: vec![argmax.len()],
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(dx)
}

fn fc_dims<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias_len: usize) -> Result<(usize, usize, usize)> {
    x.rank_check(2)?;
    weights.rank_check(2)?;
    let (b, n_in) = (x.shape()[0], x.shape()[1]);
    let (n_out, w_in) = (weights.shape()[0], weights.shape()[1]);
    if w_in != n_in || bias_len != n_out {
        return Err(Error::Shape {
            expected: vec![bias_len, n_in],
            actual: weights.shape().to_vec(),
        });
    }
    Ok((b, n_in, n_out))
}

/// `out[b,o] = bias[o] + sum_i w[o,i] * x[b,i]`.
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (b, n_in, n_out) = fc_dims(x, weights, bias.len())?;
    let wd = weights.data();
    let mut out = Tensor::zeros(vec![b, n_out]);
    out.data_mut()
        .par_chunks_mut(n_out)
        .zip(x.data().par_chunks(n_in))
        .for_each(|(o_row, x_row)| {
            for (oi, o) in o_row.iter_mut().enumerate() {
                *o = bias[oi] + dot(&wd[oi * n_in..(oi + 1) * n_in], x_row);
            }
        });
    Ok(out)
}

pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let n_out = weights.shape().first().copied().unwrap_or(0);
    let (b, n_in, n_out) = fc_dims(x, weights, n_out)?;
    if grad_out.shape() != [b, n_out] {
        return Err(Error::Shape {
            expected: vec![b, n_out],
            actual: grad_out.shape().to_vec(),
        });
    }
    let (xd, wd, g) = (x.data(), weights.data(), grad_out.data());

    let mut dw = vec![T::zero(); n_out * n_in];
    let mut db = vec![T::zero(); n_out];
    dw.par_chunks_mut(n_in)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(oi, (dw_o, db_o))| {
            for bi in 0..b {
                let gv = g[bi * n_out + oi];
                *db_o += gv;
                if gv != T::zero() {
                    axpy(gv, &xd[bi * n_in..(bi + 1) * n_in], dw_o);
                }
            }
        });

    let mut dx = Tensor::zeros(vec![b, n_in]);
    dx.data_mut()
        .par_chunks_mut(n_in)
        .zip(g.par_chunks(n_out))
        .for_each(|(dx_row, g_row)| {
            for (oi, &gv) in g_row.iter().enumerate() {
                if gv != T::zero() {
                    axpy(gv, &wd[oi * n_in..(oi + 1) * n_in], dx_row);
                }
            }
        });

    Ok(FcGrads {
        input: dx,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: db,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.rank_check(2)?;
    let n = x.shape()[1];
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n.max(1)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-probability of the true class.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> Result<T> {
    probs.rank_check(2)?;
    let (b, n) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != b {
        return Err(Error::Shape {
            expected: vec![b],
            actual: vec![labels.len()],
        });
    }
    if b == 0 {
        return Ok(T::zero());
    }
    let floor = T::of(PROB_FLOOR);
    let mut total = T::zero();
    for (row, &l) in probs.data().chunks(n).zip(labels) {
        let l = l as usize;
        if l >= n {
            return Err(Error::invalid(format!("label {l} out of range for {n} classes")));
        }
        total -= row[l].max(floor).ln();
    }
    Ok(total / T::of(b as f64))
}

/// Gradient of mean cross-entropy w.r.t. the logits feeding the softmax:
/// `(probs - onehot) / batch`.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> Result<Tensor<T>> {
    probs.rank_check(2)?;
    let (b, n) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != b {
        return Err(Error::Shape {
            expected: vec![b],
            actual: vec![labels.len()],
        });
    }
    let scale = T::one() / T::of(b.max(1) as f64);
    let mut g = probs.clone();
    for (row, &l) in g.data_mut().chunks_mut(n).zip(labels) {
        row[l as usize] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(g)
}

/// Inverted dropout. Returns the output and the multiplicative mask
/// (`0` or `1/(1-rate)` per unit; all ones outside training).
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), vec![T::one(); x.len()]));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    /// Direct definition of same-padded cross-correlation.
    fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64]) -> Vec<f64> {
        let [b, c, h, w] = x.shape().try_into().unwrap();
        let [o, _, kk, _] = k.shape().try_into().unwrap();
        let pad = (kk / 2) as isize;
        let mut out = vec![0.0; b * o * h * w];
        for bi in 0..b {
            for oi in 0..o {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = bias[oi];
                        for ci in 0..c {
                            for i in 0..kk {
                                for j in 0..kk {
                                    let sy = y as isize + i as isize - pad;
                                    let sx = xx as isize + j as isize - pad;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += k.data()[((oi * c + ci) * kk + i) * kk + j]
                                        * x.data()[((bi * c + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out[((bi * o + oi) * h + y) * w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_examples() {
        let ones = t(&[1, 1, 3, 3], &[1.0; 9]);
        let zero_k = t(&[1, 1, 3, 3], &[0.0; 9]);
        let out = conv2d_forward(&ones, &zero_k, &[0.0]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let id = t(&[1, 1, 1, 1], &[1.0]);
        let x = t(&[1, 1, 2, 3], &[1.0, 0.0, 2.0, -1.0, 3.0, 0.5]);
        assert_eq!(conv2d_forward(&x, &id, &[0.0]).unwrap(), x);

        let k1 = t(&[1, 1, 3, 3], &[1.0; 9]);
        let out = conv2d_forward(&ones, &k1, &[0.0]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_matches_definition() {
        let mut r = rng::derive(1, &[]);
        let mut rand = |n: usize| (0..n).map(|_| r.random::<f64>() - 0.5).collect::<Vec<_>>();
        let x = t(&[2, 3, 5, 4], &rand(120));
        let k = t(&[4, 3, 3, 3], &rand(108));
        let bias = rand(4);
        let out = conv2d_forward(&x, &k, &bias).unwrap();
        let want = conv_oracle(&x, &k, &bias);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = t(&[1, 2, 3, 3], &[0.0; 18]);
        let k = t(&[1, 1, 3, 3], &[0.0; 9]);
        assert!(matches!(
            conv2d_forward(&x, &k, &[0.0]),
            Err(Error::Shape { .. })
        ));
        let even = t(&[1, 2, 2, 2], &[0.0; 8]);
        assert!(conv2d_forward(&x, &even, &[0.0]).is_err());
    }

    #[test]
    fn relu_and_pool_examples() {
        let r = relu_forward(&t(&[1, 3], &[-1.0, 0.0, 2.0]));
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);

        let (p, arg) = maxpool2x2_forward(&t(&[1, 1, 2, 2], &[1.0, 3.0, 2.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[3.0]);
        assert_eq!((arg[0] / 2, arg[0] % 2), (0, 1));

        let (p, _) = maxpool2x2_forward(&t(&[1, 1, 5, 5], &[0.0; 25])).unwrap();
        assert_eq!(p.shape(), &[1, 1, 2, 2]);

        let (_, arg) = maxpool2x2_forward(&t(&[1, 1, 2, 2], &[7.0; 4])).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let x = t(&[1, 1, 2, 4], &[1.0, 5.0, 0.0, 0.0, 2.0, 0.0, 0.0, 4.0]);
        let (p, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(p.data(), &[5.0, 4.0]);
        let dx = maxpool2x2_backward(&t(&[1, 1, 1, 2], &[1.0, 2.0]), &arg, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_and_cross_entropy() {
        let p = softmax(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let p = softmax(&t(&[1, 2], &[1.0, 2.0])).unwrap();
        let e = std::f64::consts::E;
        assert!((p.data()[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.data()[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.data()[0] - 0.2689).abs() < 1e-4);

        let big = softmax(&t(&[2, 2], &[1000.0, -1000.0, 3.0, 3.0])).unwrap();
        assert!(big.all_finite());
        for row in big.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let loss = cross_entropy(&t(&[1, 2], &[0.0, 1.0]), &[1]).unwrap();
        assert_eq!(loss, 0.0);
        let clamped = cross_entropy(&t(&[1, 2], &[1.0, 0.0]), &[1]).unwrap();
        assert!((clamped - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &[0, 1]).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let mut r = rng::derive(3, &[]);
        assert_eq!(dropout_forward(&x, 0.0, true, &mut r).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.0, false, &mut r).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.7, false, &mut r).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, true, &mut r).is_err());
        assert!(dropout_forward(&x, -0.1, true, &mut r).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let x: Tensor<f64> = Tensor::new(vec![1, n], (0..n).map(|i| 1.0 + (i % 7) as f64).collect()).unwrap();
        let mut r = rng::derive(11, &[]);
        let (y, mask) = dropout_forward(&x, 0.5, true, &mut r).unwrap();
        let survivors = mask.iter().filter(|&&m| m != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() <= 0.01, "{survivors}");
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let mean_in = x.data().iter().sum::<f64>() / n as f64;
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_out / mean_in - 1.0).abs() < 0.02);
    }
}
