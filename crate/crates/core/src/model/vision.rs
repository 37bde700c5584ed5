//! Fixed linear patch encoder standing in for a pretrained vision tower.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::params::{push, push_mut, ParamGroup, ParamMut, ParamRef, Params};
use crate::real::Real;
use crate::tensor::Tensor;

/// An image already cut into `n_patches` flattened patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub n_patches: usize,
    pub patch_dim: usize,
    pub data: Vec<f32>,
}

impl PixelGrid {
    pub fn zeros(n_patches: usize, patch_dim: usize) -> Self {
        Self {
            n_patches,
            patch_dim,
            data: alloc::vec![0.0; n_patches * patch_dim],
        }
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.data[i * self.patch_dim..(i + 1) * self.patch_dim]
    }
}

/// `features[p] = P · patch[p]`, no bias, never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionStub<T> {
    /// `[d_vision, patch_dim]`
    pub patch_proj: Tensor<T>,
    pub n_patches: usize,
}

impl<T: Real> VisionStub<T> {
    pub fn new<R: Rng>(n_patches: usize, patch_dim: usize, d_vision: usize, rng: &mut R) -> Self {
        let bound = Float::sqrt(3.0 / patch_dim as f64);
        Self {
            patch_proj: Tensor::uniform(&[d_vision, patch_dim], bound, rng),
            n_patches,
        }
    }

    pub fn d_vision(&self) -> usize {
        self.patch_proj.shape()[0]
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_proj.shape()[1]
    }

    /// Returns `[n_patches, d_vision]` features.
    pub fn encode_image(&self, image: &PixelGrid) -> Result<Vec<T>> {
        if image.n_patches != self.n_patches
            || image.patch_dim != self.patch_dim()
            || image.data.len() != image.n_patches * image.patch_dim
        {
            return Err(Error::InvalidImage(format!(
                "expected {}x{} patches, got {}x{} ({} values)",
                self.n_patches,
                self.patch_dim(),
                image.n_patches,
                image.patch_dim,
                image.data.len()
            )));
        }
        let (dv, pd) = (self.d_vision(), self.patch_dim());
        let w = self.patch_proj.data();
        let mut out = Vec::with_capacity(self.n_patches * dv);
        for p in 0..self.n_patches {
            let patch = image.patch(p);
            for o in 0..dv {
                let row = &w[o * pd..(o + 1) * pd];
                let mut acc = T::zero();
                for (a, &b) in row.iter().zip(patch) {
                    acc += *a * T::of(b as f64);
                }
                out.push(acc);
            }
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            patch_proj: self.patch_proj.zeros_like(),
            n_patches: self.n_patches,
        }
    }

    pub fn cast<U: Real>(&self) -> VisionStub<U> {
        VisionStub {
            patch_proj: self.patch_proj.cast(),
            n_patches: self.n_patches,
        }
    }
}

impl<T> Params<T> for VisionStub<T> {
    fn collect<'a>(&'a self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "patch_proj", ParamGroup::Chi, &self.patch_proj);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_mut(out, prefix, "patch_proj", ParamGroup::Chi, &mut self.patch_proj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stub() -> VisionStub<f64> {
        VisionStub::new(4, 3, 5, &mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let f = stub().encode_image(&PixelGrid::zeros(4, 3)).unwrap();
        assert_eq!(f.len(), 20);
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut img = PixelGrid::zeros(4, 3);
        img.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 0.1);
        let s = stub();
        assert_eq!(s.encode_image(&img).unwrap(), s.encode_image(&img).unwrap());
        assert_eq!(stub().encode_image(&img).unwrap(), s.encode_image(&img).unwrap());
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut img = PixelGrid::zeros(4, 3);
        img.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let s = stub();
        let f = s.encode_image(&img).unwrap();
        let w = s.patch_proj.data();
        for p in 0..4 {
            for o in 0..5 {
                let expect: f64 = (0..3).map(|i| w[o * 3 + i] * img.data[p * 3 + i] as f64).sum();
                assert!((f[p * 5 + o] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_wrong_shape() {
        let s = stub();
        assert!(matches!(
            s.encode_image(&PixelGrid::zeros(3, 3)),
            Err(Error::InvalidImage(_))
        ));
        assert!(matches!(
            s.encode_image(&PixelGrid::zeros(4, 2)),
            Err(Error::InvalidImage(_))
        ));
    }
}
