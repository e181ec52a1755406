//! CT simulation: phantoms, parallel-beam projection and reconstruction,
//! polychromatic metal-artifact synthesis, and metal segmentation.

mod geometry;
mod phantom;
mod segment;
mod spectrum;
mod synth;

pub use geometry::{
    fbp, radon, radon_adjoint, Geometry, RampFilter, Reconstruction, Sinogram, MAX_RAY_STEP, MIN_FBP_ANGLES,
};
pub use phantom::{generate_phantom, render, Ellipse, Material, MetalConfig, Phantom, PhantomConfig};
pub use segment::{largest_component, project_trace, segment_metal, Segmentation};
pub use spectrum::{polychromatic_project, EnergyBin, Spectrum, FIELD_OF_VIEW_CM};
pub use synth::{
    read_manifest, splitmix64, synthesize_pair, write_dataset, ManifestEntry, PairedSample, SplitGroup, SynthConfig,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AIR_HU: f32 = -1000.0;
pub const MAX_HU: f32 = 4000.0;
/// Pixels brighter than this are treated as metal.
pub const METAL_HU_THRESHOLD: f32 = 2500.0;
/// HU window mapped onto `[-1, 1]` for the networks.
pub const WINDOW_HU: (f32, f32) = (-1000.0, 2000.0);

/// Boolean grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!("mask {rows}×{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Mask { rows, cols, data })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, data: vec![false; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Mask { rows, cols, data: (0..rows * cols).map(|p| f(p / cols, p % cols)).collect() }
    }

    /// Nonzero entries of a rank-2 tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match *t.shape() {
            [rows, cols] => Ok(Mask { rows, cols, data: t.data().iter().map(|&v| v != 0.0).collect() }),
            _ => Err(Error::dim(format!("mask tensor must be rank 2, got {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.rows, self.cols], self.data.iter().map(|&b| b as u8 as f32).collect())
            .expect("mask dimensions are positive")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::dim("mask shapes differ"));
        }
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }
}

pub fn hu_to_mu(hu: f32, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu as f64 / 1000.0)
}

pub fn mu_to_hu(mu: f64, mu_water: f64) -> f32 {
    (1000.0 * (mu / mu_water - 1.0)) as f32
}

/// Clamps to [`WINDOW_HU`] and maps affinely onto `[-1, 1]`.
pub fn hu_to_unit(image: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = WINDOW_HU;
    image.map(|v| 2.0 * (v.clamp(lo, hi) - lo) / (hi - lo) - 1.0)
}

/// Inverse of [`hu_to_unit`] on `[-1, 1]`.
pub fn unit_to_hu(image: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = WINDOW_HU;
    image.map(|v| (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * (hi - lo) + lo)
}

/// Copies `source` into `target` wherever `mask` is set.
pub fn restamp(target: &Tensor<f32>, source: &Tensor<f32>, mask: &Mask) -> Result<Tensor<f32>> {
    if target.shape() != source.shape() || target.numel() != mask.data.len() {
        return Err(Error::dim("restamp operands differ in shape"));
    }
    let mut out = target.clone();
    for ((o, &s), &m) in out.data_mut().iter_mut().zip(source.data()).zip(&mask.data) {
        if m {
            *o = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_window_round_trip() {
        let t = Tensor::new([1, 4], vec![-1000.0, 0.0, 500.0, 2000.0]).unwrap();
        let u = hu_to_unit(&t);
        for (a, b) in u.data().iter().zip([-1.0, -1.0 / 3.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(unit_to_hu(&u).max_abs_diff(&t) < 1e-3);
        let metal = Tensor::new([1, 1], vec![3500.0]).unwrap();
        assert_eq!(hu_to_unit(&metal).item(), 1.0);
    }

    #[test]
    fn mask_tensor_round_trip() {
        let m = Mask::from_fn(3, 4, |r, c| (r + c) % 3 == 0);
        assert_eq!(Mask::from_tensor(&m.to_tensor()).unwrap(), m);
        assert_eq!(m.count(), 4);
    }
}
