//! Polychromatic projection with beam hardening and Poisson noise.
//!
//! Materials are water, bone and metal. Every pixel is decomposed into
//! material densities so that its spectrum-averaged attenuation matches its
//! HU value; the detected intensity then follows Beer-Lambert per energy bin.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{hu_to_mu, radon, Geometry, Phantom, Sinogram};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Width of the simulated field of view; pixel size is this over the grid size.
pub const FIELD_OF_VIEW_CM: f64 = 25.6;

pub const WATER: usize = 0;
pub const BONE: usize = 1;
pub const METAL: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBin {
    pub kev: f64,
    pub weight: f64,
    /// Attenuation per pixel for water, bone, metal.
    pub mu: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<EnergyBin>,
}

// Approximate linear attenuation in 1/cm: water, cortical bone (1.92 g/cm³),
// titanium (4.5 g/cm³).
const TABLE_KEV: [f64; 5] = [40.0, 60.0, 80.0, 100.0, 120.0];
const TABLE_WEIGHT: [f64; 5] = [0.10, 0.30, 0.30, 0.20, 0.10];
const TABLE_MU: [[f64; 3]; 5] =
    [[0.2683, 1.278, 9.96], [0.2059, 0.604, 3.69], [0.1837, 0.428, 2.12], [0.1707, 0.356, 1.49], [0.1620, 0.326, 1.22]];

impl Spectrum {
    /// Builds a spectrum from coefficients in 1/cm.
    pub fn from_per_cm(bins: &[(f64, f64, [f64; 3])], pixel_cm: f64) -> Result<Self> {
        let s = Spectrum {
            bins: bins
                .iter()
                .map(|&(kev, weight, mu)| EnergyBin { kev, weight, mu: mu.map(|m| m * pixel_cm) })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Five bins over 40–120 keV for an `image_size` grid across the field of view.
    pub fn standard(image_size: usize) -> Self {
        let bins: Vec<_> = (0..5).map(|b| (TABLE_KEV[b], TABLE_WEIGHT[b], TABLE_MU[b])).collect();
        Self::from_per_cm(&bins, FIELD_OF_VIEW_CM / image_size as f64).expect("built-in table is valid")
    }

    /// Single bin at the standard spectrum's mean attenuation; no beam hardening.
    pub fn monochromatic(image_size: usize) -> Self {
        let s = Self::standard(image_size);
        let mu = [WATER, BONE, METAL].map(|m| s.mean_mu(m));
        Spectrum { bins: vec![EnergyBin { kev: s.mean_kev(), weight: 1.0, mu }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::arg("spectrum has no bins"));
        }
        if self.bins.iter().any(|b| !(b.weight > 0.0)) {
            return Err(Error::arg("spectrum weights must be positive"));
        }
        let total: f64 = self.bins.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("spectrum weights sum to {total}, not 1")));
        }
        for pair in self.bins.windows(2) {
            if pair[1].kev <= pair[0].kev {
                return Err(Error::arg("spectrum bins must have increasing energy"));
            }
            if (0..3).any(|m| pair[1].mu[m] > pair[0].mu[m]) {
                return Err(Error::arg("attenuation must not increase with energy"));
            }
        }
        Ok(())
    }

    /// Weight-averaged attenuation of a material; the thin-object limit.
    pub fn mean_mu(&self, material: usize) -> f64 {
        self.bins.iter().map(|b| b.weight * b.mu[material]).sum()
    }

    pub fn mean_kev(&self) -> f64 {
        self.bins.iter().map(|b| b.weight * b.kev).sum()
    }

    /// Water attenuation that defines 0 HU.
    pub fn mu_water(&self) -> f64 {
        self.mean_mu(WATER)
    }

    /// HU of pure bone at the reference attenuation.
    pub fn bone_hu(&self) -> f64 {
        1000.0 * (self.mean_mu(BONE) / self.mu_water() - 1.0)
    }

    /// Water, bone and metal density maps reproducing the phantom's HU in
    /// the thin-object limit.
    pub fn decompose(&self, phantom: &Phantom) -> [Vec<f64>; 3] {
        let (mw, mb) = (self.mu_water(), self.mean_mu(BONE));
        let bone_hu = self.bone_hu();
        let npx = phantom.grid.numel();
        let mut maps = [vec![0.0; npx], vec![0.0; npx], vec![0.0; npx]];
        for (p, (&hu, &metal)) in phantom.grid.data().iter().zip(phantom.metal_mask.data()).enumerate() {
            if metal {
                maps[METAL][p] = 1.0;
                continue;
            }
            let mu = hu_to_mu(hu, mw).max(0.0);
            let f = ((hu as f64 - 100.0) / (bone_hu - 100.0)).clamp(0.0, 1.0);
            maps[WATER][p] = (1.0 - f) * mu / mw;
            maps[BONE][p] = f * mu / mb;
        }
        maps
    }
}

/// Log-attenuation sinogram of `phantom` under `spectrum`. Counts are
/// Poisson with mean `photons·I`; pass `f64::INFINITY` to disable noise.
pub fn polychromatic_project(
    phantom: &Phantom,
    geometry: &Geometry,
    spectrum: &Spectrum,
    photons: f64,
    seed: u64,
) -> Result<Sinogram> {
    if !(photons > 0.0) {
        return Err(Error::arg(format!("photon count must be positive, got {photons}")));
    }
    spectrum.validate()?;
    let n = phantom.size();
    let maps = spectrum.decompose(phantom);
    let mut paths = Vec::with_capacity(3);
    for map in maps {
        if map.iter().all(|&v| v == 0.0) {
            paths.push(None);
            continue;
        }
        let img = Tensor::new([n, n], map.into_iter().map(|v| v as f32).collect())?;
        paths.push(Some(radon(&img, geometry)?.data));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rays = geometry.num_angles * geometry.num_detectors;
    let mut out = Vec::with_capacity(rays);
    for r in 0..rays {
        let len = |m: usize| paths[m].as_ref().map_or(0.0, |t| t.data()[r] as f64);
        let (lw, lb, lm) = (len(WATER), len(BONE), len(METAL));
        let intensity: f64 = spectrum
            .bins
            .iter()
            .map(|b| b.weight * (-(b.mu[WATER] * lw + b.mu[BONE] * lb + b.mu[METAL] * lm)).exp())
            .sum();
        let value = if photons.is_finite() {
            let mean = photons * intensity;
            let count = if mean > 0.0 {
                Poisson::new(mean).map_err(|e| Error::arg(e.to_string()))?.sample(&mut rng)
            } else {
                0.0
            };
            -(count.max(1.0) / photons).ln()
        } else {
            -intensity.ln()
        };
        out.push(value as f32);
    }
    Sinogram::new(Tensor::new([geometry.num_angles, geometry.num_detectors], out)?, geometry.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_spectrum_is_valid() {
        let s = Spectrum::standard(128);
        s.validate().unwrap();
        assert!(s.bone_hu() > 1500.0 && s.bone_hu() < 2000.0);
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(Spectrum::from_per_cm(&[(60.0, 0.5, [0.2, 0.5, 5.0])], 0.2).is_err());
        assert!(Spectrum::from_per_cm(&[(60.0, 0.5, [0.2, 0.5, 5.0]), (80.0, 0.5, [0.3, 0.5, 5.0])], 0.2).is_err());
        assert!(Spectrum::from_per_cm(&[(60.0, 1.0, [0.2, 0.5, 5.0])], 0.2).is_ok());
    }
}
