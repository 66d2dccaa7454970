//! Convolution and dense layers with explicit backward passes.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Scalar type the network is generic over (`f32` for training, `f64` for
/// gradient checks).
pub trait Real: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static {}
impl<T: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static> Real for T {}

#[inline]
pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

pub(crate) fn kaiming<T: Real, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    (0..n).map(|_| real(normal.sample(rng))).collect()
}

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

#[inline]
pub fn conv_out(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

/// 3x3, stride-2, zero-padded convolution. Weights are `[cout][cin * 9]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Values the conv backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    pub cols: Vec<T>,
    pub in_size: usize,
    pub out_size: usize,
}

impl<T: Real> Conv<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let k = cin * KERNEL * KERNEL;
        Self {
            cin,
            cout,
            weight: kaiming(cout * k, k, rng),
            bias: vec![T::zero(); cout],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cin: self.cin,
            cout: self.cout,
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    fn im2col(&self, x: &[T], size: usize, out: usize) -> Vec<T> {
        let ohw = out * out;
        let mut cols = vec![T::zero(); self.cin * KERNEL * KERNEL * ohw];
        for ci in 0..self.cin {
            let plane = &x[ci * size * size..(ci + 1) * size * size];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut cols[((ci * KERNEL + ky) * KERNEL + kx) * ohw..][..ohw];
                    for oy in 0..out {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for ox in 0..out {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < size as isize {
                                row[oy * out + ox] = plane[iy as usize * size + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[T], size: usize, out: usize) -> Vec<T> {
        let ohw = out * out;
        let mut dx = vec![T::zero(); self.cin * size * size];
        for ci in 0..self.cin {
            let plane = &mut dx[ci * size * size..(ci + 1) * size * size];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &dcols[((ci * KERNEL + ky) * KERNEL + kx) * ohw..][..ohw];
                    for oy in 0..out {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for ox in 0..out {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < size as isize {
                                let p = &mut plane[iy as usize * size + ix as usize];
                                *p = *p + row[oy * out + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Pre-activation output `[cout][out * out]`.
    pub fn forward(&self, x: &[T], size: usize) -> (Vec<T>, ConvCache<T>) {
        let out = conv_out(size);
        let ohw = out * out;
        let cols = self.im2col(x, size, out);
        let k = self.cin * KERNEL * KERNEL;
        let mut z = vec![T::zero(); self.cout * ohw];
        for co in 0..self.cout {
            let zrow = &mut z[co * ohw..(co + 1) * ohw];
            zrow.iter_mut().for_each(|v| *v = self.bias[co]);
            let wrow = &self.weight[co * k..(co + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &cols[kk * ohw..(kk + 1) * ohw];
                for (zv, &cv) in zrow.iter_mut().zip(crow) {
                    *zv = *zv + wv * cv;
                }
            }
        }
        (
            z,
            ConvCache {
                cols,
                in_size: size,
                out_size: out,
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        dz: &[T],
        cache: &ConvCache<T>,
        grad: &mut Self,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let ohw = cache.out_size * cache.out_size;
        let k = self.cin * KERNEL * KERNEL;
        for co in 0..self.cout {
            let drow = &dz[co * ohw..(co + 1) * ohw];
            grad.bias[co] = grad.bias[co] + drow.iter().copied().sum();
            let grow = &mut grad.weight[co * k..(co + 1) * k];
            for (kk, g) in grow.iter_mut().enumerate() {
                let crow = &cache.cols[kk * ohw..(kk + 1) * ohw];
                let s: T = drow.iter().zip(crow).map(|(&a, &b)| a * b).sum();
                *g = *g + s;
            }
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![T::zero(); k * ohw];
        for co in 0..self.cout {
            let drow = &dz[co * ohw..(co + 1) * ohw];
            let wrow = &self.weight[co * k..(co + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &mut dcols[kk * ohw..(kk + 1) * ohw];
                for (c, &d) in crow.iter_mut().zip(drow) {
                    *c = *c + wv * d;
                }
            }
        }
        Some(self.col2im(&dcols, cache.in_size, cache.out_size))
    }
}

/// Fully connected layer, weights `[nout][nin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub nin: usize,
    pub nout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(nin: usize, nout: usize, rng: &mut R) -> Self {
        Self {
            nin,
            nout,
            weight: kaiming(nin * nout, nin, rng),
            bias: vec![T::zero(); nout],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            nin: self.nin,
            nout: self.nout,
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.nout)
            .map(|o| {
                self.bias[o]
                    + self.weight[o * self.nin..(o + 1) * self.nin]
                        .iter()
                        .zip(x)
                        .map(|(&w, &v)| w * v)
                        .sum()
            })
            .collect()
    }

    pub fn backward(&self, dy: &[T], x: &[T], grad: &mut Self) -> Vec<T> {
        let mut dx = vec![T::zero(); self.nin];
        for o in 0..self.nout {
            let d = dy[o];
            grad.bias[o] = grad.bias[o] + d;
            let w = &self.weight[o * self.nin..(o + 1) * self.nin];
            let g = &mut grad.weight[o * self.nin..(o + 1) * self.nin];
            for i in 0..self.nin {
                g[i] = g[i] + d * x[i];
                dx[i] = dx[i] + d * w[i];
            }
        }
        dx
    }
}

pub fn relu<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.max(T::zero()));
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}
