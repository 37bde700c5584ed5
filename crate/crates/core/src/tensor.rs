//! Dense row-major tensors and the affine map shared by every layer.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    /// Uniform init on `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }
}

/// `y = W x + b` with `W` stored as `[out, in]`.
/// Dot product with eight independent partial sums, reduced pairwise.
/// The summation order is fixed, so results are deterministic.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    for (k, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        acc[k] += x * y;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / Float::sqrt(d_in as f64);
        Self {
            weight: Tensor::uniform(&[d_out, d_in], bound, rng),
            bias: bias.then(|| Tensor::zeros(&[d_out])),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.as_ref().map(Tensor::zeros_like),
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Tensor::cast),
        }
    }

    /// Applies the map to `rows` stacked inputs.
    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (d_out, d_in) = (self.d_out(), self.d_in());
        debug_assert_eq!(x.len(), rows * d_in);
        let w = self.weight.data();
        let mut y = vec![T::zero(); rows * d_out];
        for (xr, yr) in x.chunks_exact(d_in).zip(y.chunks_exact_mut(d_out)) {
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = dot(&w[o * d_in..(o + 1) * d_in], xr);
            }
            if let Some(b) = &self.bias {
                for (yo, bo) in yr.iter_mut().zip(b.data()) {
                    *yo += *bo;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>) -> Vec<T> {
        let (d_out, d_in) = (self.d_out(), self.d_in());
        let w = self.weight.data();
        let mut dx = vec![T::zero(); rows * d_in];
        {
            let gw = grad.weight.data_mut();
            for ((xr, dyr), dxr) in x
                .chunks_exact(d_in)
                .zip(dy.chunks_exact(d_out))
                .zip(dx.chunks_exact_mut(d_in))
            {
                for (o, &g) in dyr.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let wr = &w[o * d_in..(o + 1) * d_in];
                    let gwr = &mut gw[o * d_in..(o + 1) * d_in];
                    for (dxi, &wi) in dxr.iter_mut().zip(wr) {
                        *dxi += g * wi;
                    }
                    for (gwi, &xi) in gwr.iter_mut().zip(xr) {
                        *gwi += g * xi;
                    }
                }
            }
        }
        if let Some(gb) = grad.bias.as_mut() {
            let gb = gb.data_mut();
            for dyr in dy.chunks_exact(d_out) {
                for (b, g) in gb.iter_mut().zip(dyr) {
                    *b += *g;
                }
            }
        }
        dx
    }
}
