use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::scalar::Scalar;

/// `y = W x + b` with `W` stored `[out, in]`.
pub fn linear_forward<S: Scalar>(w: &[S], b: &[S], x: &[S], out_dim: usize) -> Vec<S> {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), in_dim * out_dim);
    (0..out_dim)
        .map(|o| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            b[o] + row.iter().zip(x).map(|(&a, &c)| a * c).sum::<S>()
        })
        .collect()
}

pub fn linear_backward<S: Scalar>(
    w: &[S],
    x: &[S],
    grad_y: &[S],
    grad_w: &mut [S],
    grad_b: &mut [S],
    want_input_grad: bool,
) -> Option<Vec<S>> {
    let in_dim = x.len();
    for (o, &g) in grad_y.iter().enumerate() {
        grad_b[o] += g;
        if g == S::zero() {
            continue;
        }
        let row = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for (r, &xi) in row.iter_mut().zip(x) {
            *r += g * xi;
        }
    }
    want_input_grad.then(|| {
        let mut gx = vec![S::zero(); in_dim];
        for (o, &g) in grad_y.iter().enumerate() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for (acc, &wi) in gx.iter_mut().zip(row) {
                *acc += g * wi;
            }
        }
        gx
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * 9
    }
}

// valid output rows/cols for kernel offset `d` in -1..=1
#[inline]
fn span(d: isize, n: usize) -> Range<usize> {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n - 1 } else { n };
    lo..hi
}

/// 3x3 convolution, stride 1, zero padding 1. Weight layout `[out, in, 3, 3]`.
pub fn conv3x3_forward<S: Scalar>(w: &[S], b: &[S], x: &[S], shape: ConvShape) -> Vec<S> {
    let ConvShape { in_channels, out_channels, height: h, width: wd } = shape;
    let plane = h * wd;
    let mut out = vec![S::zero(); out_channels * plane];
    for co in 0..out_channels {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..in_channels {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let k = w[((co * in_channels + ci) * 3 + ky) * 3 + kx];
                    let xs = span(dx, wd);
                    for y in span(dy, h) {
                        let sy = (y as isize + dy) as usize;
                        let drow = &mut dst[y * wd + xs.start..y * wd + xs.end];
                        let sx0 = (xs.start as isize + dx) as usize;
                        let srow = &src[sy * wd + sx0..sy * wd + sx0 + xs.len()];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv3x3_backward<S: Scalar>(
    w: &[S],
    x: &[S],
    grad_y: &[S],
    shape: ConvShape,
    grad_w: &mut [S],
    grad_b: &mut [S],
    want_input_grad: bool,
) -> Option<Vec<S>> {
    let ConvShape { in_channels, out_channels, height: h, width: wd } = shape;
    let plane = h * wd;
    let mut gx = want_input_grad.then(|| vec![S::zero(); in_channels * plane]);
    for co in 0..out_channels {
        let gy = &grad_y[co * plane..(co + 1) * plane];
        grad_b[co] += gy.iter().copied().sum::<S>();
        for ci in 0..in_channels {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let widx = ((co * in_channels + ci) * 3 + ky) * 3 + kx;
                    let k = w[widx];
                    let xs = span(dx, wd);
                    let sx0 = (xs.start as isize + dx) as usize;
                    let mut acc = S::zero();
                    for y in span(dy, h) {
                        let sy = (y as isize + dy) as usize;
                        let grow = &gy[y * wd + xs.start..y * wd + xs.end];
                        let srow = &src[sy * wd + sx0..sy * wd + sx0 + xs.len()];
                        acc += grow.iter().zip(srow).map(|(&g, &s)| g * s).sum::<S>();
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ci * plane + sy * wd + sx0..ci * plane + sy * wd + sx0 + xs.len()];
                            for (d, &g) in dst.iter_mut().zip(grow) {
                                *d += k * g;
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
    gx
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

pub fn silu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient through SiLU given the pre-activation values.
pub fn silu_backward<S: Scalar>(pre: &[S], grad_y: &[S]) -> Vec<S> {
    pre.iter()
        .zip(grad_y)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (S::one() + v * (S::one() - s))
        })
        .collect()
}

/// 2x2 average pooling over `[channels, h, w]`; `h` and `w` must be even.
pub fn avgpool2<S: Scalar>(x: &[S], channels: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let q = S::lit(0.25);
    let mut out = vec![S::zero(); channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for xx in 0..ow {
                let base = c * h * w + 2 * y * w + 2 * xx;
                out[(c * oh + y) * ow + xx] = (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]) * q;
            }
        }
    }
    out
}

pub fn avgpool2_backward<S: Scalar>(grad_y: &[S], channels: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let q = S::lit(0.25);
    let mut gx = vec![S::zero(); channels * h * w];
    for c in 0..channels {
        for y in 0..oh {
            for xx in 0..ow {
                let g = grad_y[(c * oh + y) * ow + xx] * q;
                let base = c * h * w + 2 * y * w + 2 * xx;
                gx[base] = g;
                gx[base + 1] = g;
                gx[base + w] = g;
                gx[base + w + 1] = g;
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsampling of `[channels, h, w]`.
pub fn upsample2<S: Scalar>(x: &[S], channels: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![S::zero(); channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for xx in 0..ow {
                out[(c * oh + y) * ow + xx] = x[(c * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(grad_y: &[S], channels: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![S::zero(); channels * h * w];
    for c in 0..channels {
        for y in 0..oh {
            for xx in 0..ow {
                gx[(c * h + y / 2) * w + xx / 2] += grad_y[(c * oh + y) * ow + xx];
            }
        }
    }
    gx
}

/// Sinusoidal timestep embedding `[sin(t f_0), .., sin(t f_{n-1}), cos(t f_0), ..]`
/// with `f_i = 10000^(-i/n)` and `n = dim / 2`.
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-Float::ln(10_000.0f64) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = S::lit(arg.sin());
        out[half + i] = S::lit(arg.cos());
    }
    out
}

/// Fills `dst` with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` draws.
pub fn init_fan_in<S: Scalar, R: Rng + ?Sized>(dst: &mut [S], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / Float::sqrt(fan_in.max(1) as f64);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in dst {
        *v = S::lit(dist.sample(rng));
    }
}

pub fn init_normal<S: Scalar, R: Rng + ?Sized>(dst: &mut [S], std: f64, rng: &mut R) {
    for v in dst {
        let z: f64 = StandardNormal.sample(rng);
        *v = S::lit(z * std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0.0; n];
        init_normal(&mut v, 1.0, &mut rng);
        v
    }

    fn dotp(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // central differences of <probe, f(input)> against the analytic backward
    fn check_grad(input: &[f64], probe: &[f64], f: &dyn Fn(&[f64]) -> Vec<f64>, analytic: &[f64]) {
        let h = 1e-6;
        for i in 0..input.len() {
            let mut p = input.to_vec();
            p[i] += h;
            let mut m = input.to_vec();
            m[i] -= h;
            let fd = (dotp(probe, &f(&p)) - dotp(probe, &f(&m))) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-6 * fd.abs().max(1.0), "i={i} fd={fd} an={}", analytic[i]);
        }
    }

    #[test]
    fn conv_matches_naive_and_fd() {
        let shape = ConvShape { in_channels: 2, out_channels: 3, height: 4, width: 5 };
        let w = randv(shape.weight_len(), 1);
        let b = randv(3, 2);
        let x = randv(2 * 20, 3);
        let y = conv3x3_forward(&w, &b, &x, shape);
        // naive reference
        for co in 0..3 {
            for yy in 0..4i64 {
                for xx in 0..5i64 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    acc += w[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x[ci * 20 + (sy * 5 + sx) as usize];
                                }
                            }
                        }
                    }
                    assert!((acc - y[co * 20 + (yy * 5 + xx) as usize]).abs() < 1e-12);
                }
            }
        }
        let probe = randv(y.len(), 4);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 3];
        let gx = conv3x3_backward(&w, &x, &probe, shape, &mut gw, &mut gb, true).unwrap();
        check_grad(&x, &probe, &|xi| conv3x3_forward(&w, &b, xi, shape), &gx);
        check_grad(&w, &probe, &|wi| conv3x3_forward(wi, &b, &x, shape), &gw);
        check_grad(&b, &probe, &|bi| conv3x3_forward(&w, bi, &x, shape), &gb);
    }

    #[test]
    fn linear_fd() {
        let w = randv(12, 5);
        let b = randv(3, 6);
        let x = randv(4, 7);
        let probe = randv(3, 8);
        let mut gw = vec![0.0; 12];
        let mut gb = vec![0.0; 3];
        let gx = linear_backward(&w, &x, &probe, &mut gw, &mut gb, true).unwrap();
        check_grad(&x, &probe, &|xi| linear_forward(&w, &b, xi, 3), &gx);
        check_grad(&w, &probe, &|wi| linear_forward(wi, &b, &x, 3), &gw);
    }

    #[test]
    fn elementwise_and_resampling_fd() {
        let x = randv(2 * 16, 9);
        let probe = randv(32, 10);
        check_grad(&x, &probe, &|v| silu(v), &silu_backward(&x, &probe));
        let p2 = randv(8, 11);
        check_grad(&x, &p2, &|v| avgpool2(v, 2, 4, 4), &avgpool2_backward(&p2, 2, 4, 4));
        let small = randv(8, 12);
        check_grad(&small, &probe, &|v| upsample2(v, 2, 2, 2), &upsample2_backward(&probe, 2, 2, 2));
    }

    #[test]
    fn embedding_layout() {
        let e: Vec<f64> = timestep_embedding(0, 8);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        let e: Vec<f64> = timestep_embedding(3, 8);
        assert!((e[0] - Float::sin(3.0f64)).abs() < 1e-15);
    }
}
