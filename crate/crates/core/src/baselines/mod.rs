//! Sinogram-completion baselines: linear interpolation across the metal
//! trace, and its prior-normalized variant.

use std::fmt;
use std::str::FromStr;

use crate::ctsim::{
    fbp, hu_to_mu, mu_to_hu, project_trace, radon, restamp, segment_metal, Geometry, Mask, RampFilter, Sinogram,
    Spectrum,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Inpainted {
    pub sinogram: Sinogram,
    /// Rows whose every detector was traced; filled from the nearest
    /// untraced row instead of interpolated.
    pub fallback_rows: Vec<usize>,
}

fn trace_of(sino: &Sinogram) -> Result<&Mask> {
    sino.trace_mask.as_ref().ok_or_else(|| Error::arg("sinogram has no trace mask"))
}

/// Replaces every traced run of each row by linear interpolation between its
/// untraced neighbours, or by the one neighbour at a row end.
pub fn li_inpaint(sino: &Sinogram) -> Result<Inpainted> {
    let trace = trace_of(sino)?;
    let (na, nd) = (sino.geometry.num_angles, sino.geometry.num_detectors);
    let mut out = sino.data.clone();
    let mut fallback_rows = Vec::new();
    for a in 0..na {
        let t = &trace.data()[a * nd..(a + 1) * nd];
        if t.iter().all(|&b| b) {
            fallback_rows.push(a);
            continue;
        }
        let row = &mut out.data_mut()[a * nd..(a + 1) * nd];
        let mut d = 0;
        while d < nd {
            if !t[d] {
                d += 1;
                continue;
            }
            let start = d;
            while d < nd && t[d] {
                d += 1;
            }
            let left = start.checked_sub(1).map(|l| (l, row[l] as f64));
            let right = (d < nd).then(|| (d, row[d] as f64));
            for k in start..d {
                row[k] = match (left, right) {
                    (Some((l, vl)), Some((r, vr))) => vl + (vr - vl) * (k - l) as f64 / (r - l) as f64,
                    (Some((_, v)), None) | (None, Some((_, v))) => v,
                    (None, None) => unreachable!("row has an untraced entry"),
                } as f32;
            }
        }
    }
    // Whole-row traces copy the nearest row that was interpolated normally.
    let good: Vec<usize> = (0..na).filter(|a| !fallback_rows.contains(a)).collect();
    for &a in &fallback_rows {
        if let Some(&src) = good.iter().min_by_key(|&&g| {
            let diff = g.abs_diff(a);
            diff.min(na - diff)
        }) {
            let copy = out.data()[src * nd..(src + 1) * nd].to_vec();
            out.data_mut()[a * nd..(a + 1) * nd].copy_from_slice(&copy);
        }
    }
    Ok(Inpainted { sinogram: Sinogram { data: out, ..sino.clone() }, fallback_rows })
}

/// Thresholds that turn an uncorrected image into the piecewise-constant
/// prior: air below `air_hu`, bone above `bone_hu`, water in between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorThresholds {
    pub air_hu: f32,
    pub bone_hu: f32,
}

impl Default for PriorThresholds {
    fn default() -> Self {
        PriorThresholds { air_hu: -300.0, bone_hu: 150.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorImage {
    /// HU values.
    pub grid: Tensor<f32>,
    pub thresholds: PriorThresholds,
}

impl PriorImage {
    /// Metal pixels are treated as water.
    pub fn segment(image_hu: &Tensor<f32>, metal: &Mask, thresholds: PriorThresholds) -> Self {
        let mut grid = image_hu.map(|v| {
            if v < thresholds.air_hu {
                -1000.0
            } else if v > thresholds.bone_hu {
                v
            } else {
                0.0
            }
        });
        for (g, &m) in grid.data_mut().iter_mut().zip(metal.data()) {
            if m {
                *g = 0.0;
            }
        }
        PriorImage { grid, thresholds }
    }
}

/// Normalize by the prior's projections, interpolate, denormalize. Untraced
/// entries are returned unchanged.
pub fn nmar_with_prior(sino: &Sinogram, prior_mu: &Tensor<f32>) -> Result<Inpainted> {
    let trace = trace_of(sino)?;
    let prior = radon(prior_mu, &sino.geometry)?;
    let mut positive: Vec<f32> = prior.data.data().iter().copied().filter(|&v| v > 0.0).collect();
    let eps = if positive.is_empty() {
        1e-6
    } else {
        let mid = positive.len() / 2;
        *positive.select_nth_unstable_by(mid, f32::total_cmp).1 * 1e-3
    };
    let denom: Vec<f32> = prior.data.data().iter().map(|&p| p.max(eps)).collect();
    let normalized: Vec<f32> = sino.data.data().iter().zip(&denom).map(|(&s, &d)| s / d).collect();
    let normalized = Sinogram { data: Tensor::new(sino.data.shape(), normalized)?, ..sino.clone() };
    let filled = li_inpaint(&normalized)?;
    let mut out = sino.data.clone();
    for (((o, &f), &d), &t) in out.data_mut().iter_mut().zip(filled.sinogram.data.data()).zip(&denom).zip(trace.data())
    {
        if t {
            *o = f * d;
        }
    }
    Ok(Inpainted { sinogram: Sinogram { data: out, ..sino.clone() }, fallback_rows: filled.fallback_rows })
}

/// [`nmar_with_prior`] with the prior segmented from the uncorrected HU image.
pub fn nmar(sino: &Sinogram, uncorrected_hu: &Tensor<f32>, mu_water: f64) -> Result<Inpainted> {
    let trace = trace_of(sino)?;
    let n = sino.geometry.image_size;
    let metal = if trace.is_empty() { Mask::empty(n, n) } else { segment_metal(uncorrected_hu)?.mask };
    let prior = PriorImage::segment(uncorrected_hu, &metal, PriorThresholds::default());
    let prior_mu = prior.grid.map(|hu| hu_to_mu(hu, mu_water).max(0.0) as f32);
    nmar_with_prior(sino, &prior_mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Li,
    Nmar,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Li => "li",
            Method::Nmar => "nmar",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "li" => Ok(Method::Li),
            "nmar" => Ok(Method::Nmar),
            _ => Err(Error::arg(format!("unknown baseline {s:?}; expected li or nmar"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub geometry: Geometry,
    /// Attenuation per pixel that defines 0 HU.
    pub mu_water: f64,
    pub filter: RampFilter,
}

impl BaselineConfig {
    /// Matches the default synthesis settings for `size`.
    pub fn for_size(size: usize) -> Self {
        BaselineConfig {
            geometry: Geometry::for_image(size, 180),
            mu_water: Spectrum::standard(size).mu_water(),
            filter: RampFilter::RamLak,
        }
    }
}

/// Re-projects an artifact-affected HU image, completes the metal trace,
/// reconstructs, and re-stamps the metal pixels.
pub fn reconstruct_baseline(image_hu: &Tensor<f32>, method: Method, config: &BaselineConfig) -> Result<Tensor<f32>> {
    let mw = config.mu_water;
    let metal = segment_metal(image_hu)?.mask;
    let mu = image_hu.map(|hu| hu_to_mu(hu, mw).max(0.0) as f32);
    let trace = project_trace(&metal, &config.geometry)?;
    let sino = radon(&mu, &config.geometry)?.with_trace(trace)?;
    let to_hu =
        |s: &Sinogram| -> Result<Tensor<f32>> { Ok(fbp(s, config.filter)?.image.map(|v| mu_to_hu(v as f64, mw))) };
    let li = to_hu(&li_inpaint(&sino)?.sinogram)?;
    let corrected = match method {
        Method::Li => li,
        // The prior is segmented from the LI result, which is far freer of
        // streaks than the input; metal pixels keep their input values so
        // the segmentation still finds them.
        Method::Nmar => to_hu(&nmar(&sino, &restamp(&li, image_hu, &metal)?, mw)?.sinogram)?,
    };
    restamp(&corrected, image_hu, &metal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sino_with(rows: Vec<f32>, trace: Vec<bool>, nd: usize) -> Sinogram {
        let na = rows.len() / nd;
        let geom = Geometry { image_size: 2, num_angles: na, num_detectors: nd, detector_spacing: 1.0 };
        Sinogram::new(Tensor::new([na, nd], rows).unwrap(), geom)
            .unwrap()
            .with_trace(Mask::new(na, nd, trace).unwrap())
            .unwrap()
    }

    #[test]
    fn edge_runs_use_nearest_value() {
        let s = sino_with(vec![9.0, 9.0, 1.0, 2.0, 9.0], vec![true, true, false, false, true], 5);
        let out = li_inpaint(&s).unwrap();
        assert_eq!(out.sinogram.data.data(), &[1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(out.fallback_rows.is_empty());
    }

    #[test]
    fn full_row_trace_is_flagged() {
        let s = sino_with(vec![1.0, 2.0, 3.0, 7.0, 7.0, 7.0], vec![false, true, false, true, true, true], 3);
        let out = li_inpaint(&s).unwrap();
        assert_eq!(out.fallback_rows, vec![1]);
        assert_eq!(out.sinogram.data.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn missing_trace_is_an_error() {
        let geom = Geometry::for_image(8, 4);
        assert!(li_inpaint(&Sinogram::zeros(&geom)).is_err());
    }

    #[test]
    fn prior_thresholds() {
        let img = Tensor::new([1, 4], vec![-800.0, 40.0, 900.0, 3000.0]).unwrap();
        let metal = Mask::new(1, 4, vec![false, false, false, true]).unwrap();
        let p = PriorImage::segment(&img, &metal, PriorThresholds::default());
        assert_eq!(p.grid.data(), &[-1000.0, 0.0, 900.0, 0.0]);
    }
}
