//! Parallel-beam geometry, ray-driven forward projection with its exact
//! adjoint, and filtered back-projection.
//!
//! Image pixel `(i, j)` of an `n×n` grid sits at `x = j − (n−1)/2`,
//! `y = (n−1)/2 − i`. A ray at angle `θ` and detector offset `s` is the line
//! `s·(cosθ, sinθ) + t·(−sinθ, cosθ)`.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest spacing between samples along a ray, in pixels.
pub const MAX_RAY_STEP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub image_size: usize,
    pub num_angles: usize,
    pub num_detectors: usize,
    /// Detector pitch in pixels.
    pub detector_spacing: f64,
}

impl Geometry {
    /// Unit-pitch detector covering the image diagonal: `⌈n·√2⌉ + 2`
    /// elements, rounded up to odd so one element is centred (185 for 128).
    pub fn for_image(image_size: usize, num_angles: usize) -> Self {
        let mut nd = (image_size as f64 * std::f64::consts::SQRT_2).ceil() as usize + 2;
        if nd.is_multiple_of(2) {
            nd += 1;
        }
        Geometry { image_size, num_angles, num_detectors: nd, detector_spacing: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_angles < 1 || self.num_detectors < 1 || self.image_size < 1 {
            return Err(Error::arg(format!("degenerate geometry {self:?}")));
        }
        if !(self.detector_spacing > 0.0) {
            return Err(Error::arg("detector spacing must be positive"));
        }
        let span = self.num_detectors as f64 * self.detector_spacing;
        if span + 1e-9 < self.image_size as f64 * std::f64::consts::SQRT_2 {
            return Err(Error::arg(format!("detector span {span:.1} px does not cover the image diagonal")));
        }
        Ok(())
    }

    /// Uniform angles over `[0, π)`.
    pub fn angles(&self) -> Vec<f64> {
        (0..self.num_angles).map(|a| a as f64 * PI / self.num_angles as f64).collect()
    }

    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.num_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    fn ray_samples(&self) -> (usize, f64, f64) {
        let half = self.image_size as f64 * std::f64::consts::SQRT_2 / 2.0 + 1.0;
        let count = (2.0 * half / MAX_RAY_STEP).ceil() as usize;
        let step = 2.0 * half / count as f64;
        (count, step, half)
    }
}

/// Projection data; rows are angles, columns detectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Tensor<f32>,
    pub geometry: Geometry,
    pub trace_mask: Option<Mask>,
}

impl Sinogram {
    pub fn new(data: Tensor<f32>, geometry: Geometry) -> Result<Self> {
        if data.shape() != [geometry.num_angles, geometry.num_detectors] {
            return Err(Error::dim(format!(
                "sinogram of shape {:?} for geometry {}×{}",
                data.shape(),
                geometry.num_angles,
                geometry.num_detectors
            )));
        }
        Ok(Sinogram { data, geometry, trace_mask: None })
    }

    pub fn zeros(geometry: &Geometry) -> Self {
        Sinogram {
            data: Tensor::zeros([geometry.num_angles, geometry.num_detectors]),
            geometry: geometry.clone(),
            trace_mask: None,
        }
    }

    pub fn with_trace(mut self, trace: Mask) -> Result<Self> {
        if trace.shape() != (self.geometry.num_angles, self.geometry.num_detectors) {
            return Err(Error::dim("trace mask shape differs from sinogram"));
        }
        self.trace_mask = Some(trace);
        Ok(self)
    }

    pub fn row(&self, a: usize) -> &[f32] {
        let nd = self.geometry.num_detectors;
        &self.data.data()[a * nd..(a + 1) * nd]
    }
}

/// Visits the bilinear taps of every sample on every ray:
/// `visit(sino_index, pixel_index, weight)`.
fn for_each_tap(geom: &Geometry, mut visit: impl FnMut(usize, usize, f64)) {
    let n = geom.image_size;
    let c = (n as f64 - 1.0) / 2.0;
    let (count, step, half) = geom.ray_samples();
    for (a, theta) in geom.angles().into_iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        for d in 0..geom.num_detectors {
            let s = geom.detector_offset(d);
            let idx = a * geom.num_detectors + d;
            for k in 0..count {
                let t = -half + (k as f64 + 0.5) * step;
                let x = s * cos - t * sin;
                let y = s * sin + t * cos;
                let col = x + c;
                let row = c - y;
                if row <= -1.0 || col <= -1.0 || row >= n as f64 || col >= n as f64 {
                    continue;
                }
                let (r0, c0) = (row.floor(), col.floor());
                let (fr, fc) = (row - r0, col - c0);
                let (r0, c0) = (r0 as isize, c0 as isize);
                for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                    let r = r0 + dr;
                    if r < 0 || r >= n as isize {
                        continue;
                    }
                    for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                        let cc = c0 + dc;
                        if cc < 0 || cc >= n as isize {
                            continue;
                        }
                        let w = wr * wc * step;
                        if w != 0.0 {
                            visit(idx, r as usize * n + cc as usize, w);
                        }
                    }
                }
            }
        }
    }
}

fn check_image(image: &Tensor<f32>, geom: &Geometry) -> Result<()> {
    if image.shape() != [geom.image_size, geom.image_size] {
        return Err(Error::dim(format!("image {:?} does not match geometry size {}", image.shape(), geom.image_size)));
    }
    Ok(())
}

/// Line integrals by fixed-step sampling (step ≤ 0.5 px) with bilinear
/// interpolation.
pub fn radon(image: &Tensor<f32>, geom: &Geometry) -> Result<Sinogram> {
    geom.validate()?;
    check_image(image, geom)?;
    let px = image.data();
    let mut acc = vec![0.0f64; geom.num_angles * geom.num_detectors];
    for_each_tap(geom, |si, pi, w| acc[si] += w * px[pi] as f64);
    let data = Tensor::new([geom.num_angles, geom.num_detectors], acc.into_iter().map(|v| v as f32).collect())?;
    Sinogram::new(data, geom.clone())
}

/// Exact transpose of [`radon`].
pub fn radon_adjoint(sino: &Sinogram) -> Result<Tensor<f32>> {
    let geom = &sino.geometry;
    geom.validate()?;
    let n = geom.image_size;
    let s = sino.data.data();
    let mut acc = vec![0.0f64; n * n];
    for_each_tap(geom, |si, pi, w| acc[pi] += w * s[si] as f64);
    Tensor::new([n, n], acc.into_iter().map(|v| v as f32).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RampFilter {
    #[default]
    RamLak,
    /// Ram-Lak with a Hann apodization window.
    Hann,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub image: Tensor<f32>,
    /// Set when there are too few views for a usable reconstruction.
    pub degraded: bool,
}

pub const MIN_FBP_ANGLES: usize = 8;

fn filter_rows(sino: &Sinogram, filter: RampFilter) -> Vec<f64> {
    let geom = &sino.geometry;
    let nd = geom.num_detectors;
    let len = (2 * nd).next_power_of_two();
    let tau = geom.detector_spacing;

    // Spatial-domain band-limited ramp, wrapped onto the FFT grid.
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 1.0 / (4.0 * tau * tau);
    for k in 1..len / 2 {
        if k % 2 == 1 {
            let v = -1.0 / ((k * k) as f64 * PI * PI * tau * tau);
            kernel[k].re = v;
            kernel[len - k].re = v;
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    fwd.process(&mut kernel);
    if filter == RampFilter::Hann {
        for (k, v) in kernel.iter_mut().enumerate() {
            let f = k.min(len - k) as f64 / (len / 2) as f64;
            *v *= 0.5 * (1.0 + (PI * f).cos());
        }
    }

    let mut out = vec![0.0f64; geom.num_angles * nd];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for a in 0..geom.num_angles {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(sino.row(a)) {
            b.re = v as f64;
        }
        fwd.process(&mut buf);
        buf.iter_mut().zip(&kernel).for_each(|(b, k)| *b *= k);
        inv.process(&mut buf);
        for (o, b) in out[a * nd..(a + 1) * nd].iter_mut().zip(&buf) {
            *o = b.re / len as f64 * tau;
        }
    }
    out
}

/// Ramp-filtered, pixel-driven back-projection with linear interpolation
/// along the detector.
pub fn fbp(sino: &Sinogram, filter: RampFilter) -> Result<Reconstruction> {
    let geom = &sino.geometry;
    geom.validate()?;
    let filtered = filter_rows(sino, filter);
    let n = geom.image_size;
    let nd = geom.num_detectors;
    let c = (n as f64 - 1.0) / 2.0;
    let centre = (nd as f64 - 1.0) / 2.0;
    let mut img = vec![0.0f64; n * n];
    for (a, theta) in geom.angles().into_iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        let row = &filtered[a * nd..(a + 1) * nd];
        for i in 0..n {
            let y = c - i as f64;
            for j in 0..n {
                let x = j as f64 - c;
                let u = (x * cos + y * sin) / geom.detector_spacing + centre;
                if u < 0.0 || u > (nd - 1) as f64 {
                    continue;
                }
                let u0 = (u.floor() as usize).min(nd - 2);
                let f = u - u0 as f64;
                img[i * n + j] += row[u0] * (1.0 - f) + row[u0 + 1] * f;
            }
        }
    }
    let scale = PI / geom.num_angles as f64;
    let image = Tensor::new([n, n], img.into_iter().map(|v| (v * scale) as f32).collect())?;
    Ok(Reconstruction { image, degraded: geom.num_angles < MIN_FBP_ANGLES })
}
