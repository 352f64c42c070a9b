//! Layer primitives with hand-written backward passes.
//!
//! Convolution weights are frozen, so convolutions only propagate gradients to
//! their input. Batch-norm propagates to its input and to its affine parameters.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::scalar::{lit, Scalar};

/// Channel-major `c x h x w` activation buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            c,
            h,
            w,
            data: vec![S::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature map size");
        FeatureMap { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, k: usize) -> &[S] {
        let n = self.plane();
        &self.data[k * n..(k + 1) * n]
    }

    /// Stack `self` and `other` along channels.
    pub fn concat(&self, other: &FeatureMap<S>) -> FeatureMap<S> {
        assert_eq!((self.h, self.w), (other.h, other.w), "concat spatial dims");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        FeatureMap::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Inverse of [`FeatureMap::concat`]: first `c_first` channels, then the rest.
    pub fn split(self, c_first: usize) -> (FeatureMap<S>, FeatureMap<S>) {
        let n = self.plane();
        let mut data = self.data;
        let rest = data.split_off(c_first * n);
        (
            FeatureMap::from_vec(c_first, self.h, self.w, data),
            FeatureMap::from_vec(self.c - c_first, self.h, self.w, rest),
        )
    }
}

/// 2-D convolution with zero "same" padding (`k / 2`) and integer stride.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<S> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// `cout x cin x k x k`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

/// Output index range `[lo, hi)` whose tap `kx` reads inside `[0, n)`.
#[inline]
fn valid_range(n: usize, out_n: usize, kx: usize, pad: usize, stride: usize) -> (usize, usize) {
    let off = kx as isize - pad as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let last = n as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out_n);
    (lo.min(hi), hi)
}

impl<S: Scalar> Conv<S> {
    /// Kernels from `N(0, 2 / fan_in)`, zero bias.
    pub fn he_init<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = (0..cout * cin * k * k)
            .map(|_| S::from_f64_lossy(normal.sample(rng)))
            .collect();
        Conv {
            cin,
            cout,
            k,
            stride,
            weight,
            bias: vec![S::zero(); cout],
        }
    }

    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.k) / self.stride + 1,
            (w + 2 * p - self.k) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    fn w_at(&self, co: usize, ci: usize, ky: usize, kx: usize) -> S {
        self.weight[((co * self.cin + ci) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&self, x: &FeatureMap<S>) -> FeatureMap<S> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = self.out_dims(x.h, x.w);
        let (p, s, k) = (self.pad(), self.stride, self.k);
        let mut out = FeatureMap::zeros(self.cout, oh, ow);
        let plane_in = x.plane();
        out.data.par_chunks_mut(oh * ow).enumerate().for_each(|(co, dst)| {
            dst.fill(self.bias[co]);
            for ci in 0..self.cin {
                let src = &x.data[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(x.h, oh, ky, p, s);
                    for kx in 0..k {
                        let wv = self.w_at(co, ci, ky, kx);
                        let (xlo, xhi) = valid_range(x.w, ow, kx, p, s);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * s + ky - p;
                            let row = &src[iy * x.w..(iy + 1) * x.w];
                            let drow = &mut dst[oy * ow + xlo..oy * ow + xhi];
                            if s == 1 {
                                let srow = &row[xlo + kx - p..xhi + kx - p];
                                for (d, &v) in drow.iter_mut().zip(srow) {
                                    *d += wv * v;
                                }
                            } else {
                                for (n, d) in drow.iter_mut().enumerate() {
                                    *d += wv * row[(xlo + n) * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        });
        out
    }

    /// Gradient with respect to the input of an `in_h x in_w` forward pass.
    pub fn backward_input(&self, grad_out: &FeatureMap<S>, in_h: usize, in_w: usize) -> FeatureMap<S> {
        let (oh, ow) = self.out_dims(in_h, in_w);
        assert_eq!(
            (grad_out.c, grad_out.h, grad_out.w),
            (self.cout, oh, ow),
            "conv grad dims"
        );
        let (p, s, k) = (self.pad(), self.stride, self.k);
        let mut gin = FeatureMap::zeros(self.cin, in_h, in_w);
        let plane_out = oh * ow;
        gin.data.par_chunks_mut(in_h * in_w).enumerate().for_each(|(ci, dst)| {
            for co in 0..self.cout {
                let g = &grad_out.data[co * plane_out..(co + 1) * plane_out];
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(in_h, oh, ky, p, s);
                    for kx in 0..k {
                        let wv = self.w_at(co, ci, ky, kx);
                        let (xlo, xhi) = valid_range(in_w, ow, kx, p, s);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * s + ky - p;
                            let grow = &g[oy * ow + xlo..oy * ow + xhi];
                            let drow = &mut dst[iy * in_w..(iy + 1) * in_w];
                            if s == 1 {
                                let drow = &mut drow[xlo + kx - p..xhi + kx - p];
                                for (d, &v) in drow.iter_mut().zip(grow) {
                                    *d += wv * v;
                                }
                            } else {
                                for (n, &v) in grow.iter().enumerate() {
                                    drow[(xlo + n) * s + kx - p] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        });
        gin
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Values saved by [`batch_norm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    pub xhat: FeatureMap<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Per-channel normalization over the spatial extent of a single image, then
/// `gamma * xhat + beta`.
pub fn batch_norm_forward<S: Scalar>(x: &FeatureMap<S>, gamma: &[S], beta: &[S]) -> (FeatureMap<S>, BnCache<S>) {
    assert_eq!(gamma.len(), x.c);
    assert_eq!(beta.len(), x.c);
    let n = x.plane();
    let inv_n = S::one() / lit::<S>(n as f64);
    let eps = lit::<S>(BN_EPS);
    let mut y = FeatureMap::zeros(x.c, x.h, x.w);
    let mut xhat = FeatureMap::zeros(x.c, x.h, x.w);
    let stats: Vec<(S, S, S)> = y
        .data
        .par_chunks_mut(n)
        .zip(xhat.data.par_chunks_mut(n))
        .enumerate()
        .map(|(c, (yc, hc))| {
            let xc = x.channel(c);
            let mean = xc.iter().copied().sum::<S>() * inv_n;
            let var = xc.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_n;
            let inv_std = S::one() / (var + eps).sqrt();
            for ((yv, hv), &xv) in yc.iter_mut().zip(hc.iter_mut()).zip(xc) {
                *hv = (xv - mean) * inv_std;
                *yv = gamma[c] * *hv + beta[c];
            }
            (mean, var, inv_std)
        })
        .collect();
    let cache = BnCache {
        xhat,
        inv_std: stats.iter().map(|s| s.2).collect(),
        mean: stats.iter().map(|s| s.0).collect(),
        var: stats.iter().map(|s| s.1).collect(),
    };
    (y, cache)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<S: Scalar>(
    dy: &FeatureMap<S>,
    cache: &BnCache<S>,
    gamma: &[S],
) -> (FeatureMap<S>, Vec<S>, Vec<S>) {
    let n = dy.plane();
    let nf = lit::<S>(n as f64);
    let mut dx = FeatureMap::zeros(dy.c, dy.h, dy.w);
    let per: Vec<(S, S)> = dx
        .data
        .par_chunks_mut(n)
        .enumerate()
        .map(|(c, dxc)| {
            let dyc = dy.channel(c);
            let xh = cache.xhat.channel(c);
            let dbeta = dyc.iter().copied().sum::<S>();
            let dgamma = dyc.iter().zip(xh).map(|(&g, &h)| g * h).sum::<S>();
            let scale = gamma[c] * cache.inv_std[c] / nf;
            for ((d, &g), &h) in dxc.iter_mut().zip(dyc).zip(xh) {
                *d = scale * (nf * g - dbeta - h * dgamma);
            }
            (dgamma, dbeta)
        })
        .collect();
    (dx, per.iter().map(|p| p.0).collect(), per.iter().map(|p| p.1).collect())
}

pub fn leaky_relu_inplace<S: Scalar>(x: &mut FeatureMap<S>, slope: S) {
    for v in x.data.iter_mut() {
        if *v <= S::zero() {
            *v *= slope;
        }
    }
}

/// Backward through leaky ReLU given the activation's output (sign matches input).
pub fn leaky_relu_backward_inplace<S: Scalar>(grad: &mut FeatureMap<S>, out: &FeatureMap<S>, slope: S) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= S::zero() {
            *g *= slope;
        }
    }
}

/// Source taps `(i0, i1, frac)` for 2x linear upsampling with half-pixel centers.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear2x<S: Scalar>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let ty = upsample_taps(x.h);
    let tx = upsample_taps(x.w);
    let mut out = FeatureMap::zeros(x.c, oh, ow);
    out.data.par_chunks_mut(oh * ow).enumerate().for_each(|(c, dst)| {
        let src = x.channel(c);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (lit::<S>(fy), lit::<S>(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gx) = (lit::<S>(fx), lit::<S>(1.0 - fx));
                let top = gx * src[y0 * x.w + x0] + fx * src[y0 * x.w + x1];
                let bot = gx * src[y1 * x.w + x0] + fx * src[y1 * x.w + x1];
                dst[oy * ow + ox] = gy * top + fy * bot;
            }
        }
    });
    out
}

/// Adjoint of [`upsample_bilinear2x`] for an `h x w` input.
pub fn upsample_bilinear2x_backward<S: Scalar>(grad: &FeatureMap<S>, h: usize, w: usize) -> FeatureMap<S> {
    assert_eq!((grad.h, grad.w), (2 * h, 2 * w), "upsample grad dims");
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut gin = FeatureMap::zeros(grad.c, h, w);
    gin.data.par_chunks_mut(h * w).enumerate().for_each(|(c, dst)| {
        let g = grad.channel(c);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (lit::<S>(fy), lit::<S>(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gx) = (lit::<S>(fx), lit::<S>(1.0 - fx));
                let v = g[oy * grad.w + ox];
                dst[y0 * w + x0] += gy * gx * v;
                dst[y0 * w + x1] += gy * fx * v;
                dst[y1 * w + x0] += fy * gx * v;
                dst[y1 * w + x1] += fy * fx * v;
            }
        }
    });
    gin
}

#[inline]
pub fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of a zero-padded strided convolution, one output at a time.
    fn conv_reference(conv: &Conv<f64>, x: &FeatureMap<f64>) -> FeatureMap<f64> {
        let (oh, ow) = conv.out_dims(x.h, x.w);
        let p = conv.pad() as isize;
        let mut out = FeatureMap::zeros(conv.cout, oh, ow);
        for co in 0..conv.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[co];
                    for ci in 0..conv.cin {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = (oy * conv.stride) as isize + ky as isize - p;
                                let ix = (ox * conv.stride) as isize + kx as isize - p;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += conv.w_at(co, ci, ky, kx) * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, h, w) in &[
            (3, 1, 5, 7),
            (3, 2, 8, 6),
            (1, 1, 4, 4),
            (5, 2, 9, 7),
            (3, 2, 1, 1),
            (3, 1, 1, 2),
        ] {
            let mut conv = Conv::<f64>::he_init(2, 3, k, s, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3];
            let x = random_map(&mut rng, 2, h, w);
            let fast = conv.forward(&x);
            let slow = conv_reference(&conv, &x);
            assert_eq!((fast.h, fast.w), (slow.h, slow.w));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> when bias is zero
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(k, s, h, w) in &[(3, 1, 6, 5), (3, 2, 8, 8), (3, 2, 7, 5)] {
            let conv = Conv::<f64>::he_init(3, 2, k, s, &mut rng);
            let x = random_map(&mut rng, 3, h, w);
            let y = conv.forward(&x);
            let g = random_map(&mut rng, 2, y.h, y.w);
            let gx = conv.backward_input(&g, h, w);
            let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_map(&mut rng, 2, 3, 4);
        let y = upsample_bilinear2x(&x);
        let g = random_map(&mut rng, 2, 6, 8);
        let gx = upsample_bilinear2x_backward(&g, 3, 4);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = FeatureMap::from_vec(1, 2, 3, vec![0.7f64; 6]);
        assert!(upsample_bilinear2x(&x).data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn doubling_gamma_doubles_bn_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_map(&mut rng, 2, 4, 4);
        let beta = vec![0.0, 0.0];
        let (y1, _) = batch_norm_forward(&x, &[0.7, 1.3], &beta);
        let (y2, _) = batch_norm_forward(&x, &[1.4, 2.6], &beta);
        for (a, b) in y1.data.iter().zip(&y2.data) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn bn_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_map(&mut rng, 3, 5, 5);
        let (y, cache) = batch_norm_forward(&x, &[1.0; 3], &[0.0; 3]);
        for c in 0..3 {
            let ch = y.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / 25.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - cache.var[c] / (cache.var[c] + BN_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = FeatureMap::from_vec(1, 1, 2, vec![1.0f32, 2.0]);
        let b = FeatureMap::from_vec(2, 1, 2, vec![3.0f32, 4.0, 5.0, 6.0]);
        let (a2, b2) = a.concat(&b).split(1);
        assert_eq!((a2, b2), (a, b));
    }
}
