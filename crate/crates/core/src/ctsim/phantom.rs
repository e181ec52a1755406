//! Procedural ellipse phantoms in Hounsfield units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mask, AIR_HU, MAX_HU, METAL_HU_THRESHOLD};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Material {
    SoftTissue,
    Fat,
    Lung,
    Bone,
    Metal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    /// Centre in pixel coordinates `(row, col)`.
    pub center: (f64, f64),
    /// Semi-axes in pixels.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub material: Material,
    pub hu: f32,
}

impl Ellipse {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (dr, dc) = (row - self.center.0, col - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = dc * c + dr * s;
        let v = -dc * s + dr * c;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }

    fn pixel_count(&self, size: usize) -> usize {
        (0..size * size).filter(|&p| self.contains((p / size) as f64, (p % size) as f64)).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetalConfig {
    pub inserts: (usize, usize),
    /// Pixel count range of each insert.
    pub pixels: (usize, usize),
    pub hu: (f32, f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub structures: (usize, usize),
    /// Body semi-axes as fractions of the image size.
    pub body_axes: (f64, f64),
    pub metal: Option<MetalConfig>,
}

impl PhantomConfig {
    /// Defaults scaled so metal covers the same fraction of the field of
    /// view as 30–400 pixels does at 128×128.
    pub fn for_size(size: usize) -> Self {
        let scale = (size as f64 / 128.0).powi(2);
        let lo = ((30.0 * scale).round() as usize).max(4);
        let hi = ((400.0 * scale).round() as usize).max(lo + 1);
        PhantomConfig {
            structures: (2, 6),
            body_axes: (0.36, 0.46),
            metal: Some(MetalConfig { inserts: (1, 3), pixels: (lo, hi), hu: (3000.0, 4000.0) }),
        }
    }

    pub fn without_metal(mut self) -> Self {
        self.metal = None;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// HU values, metal included.
    pub grid: Tensor<f32>,
    pub metal_mask: Mask,
    pub ellipses: Vec<Ellipse>,
}

impl Phantom {
    pub fn size(&self) -> usize {
        self.grid.shape()[0]
    }

    /// The same anatomy with every metal insert left out.
    pub fn without_metal(&self) -> Phantom {
        let kept: Vec<Ellipse> = self.ellipses.iter().filter(|e| e.material != Material::Metal).cloned().collect();
        render(self.size(), kept)
    }

    pub fn metal_pixels(&self) -> usize {
        self.metal_mask.count()
    }
}

/// Rasterizes ellipses in order; later ellipses overwrite earlier ones.
pub fn render(size: usize, ellipses: Vec<Ellipse>) -> Phantom {
    let mut grid = vec![AIR_HU; size * size];
    let mut metal = vec![false; size * size];
    for e in &ellipses {
        for (p, (g, m)) in grid.iter_mut().zip(metal.iter_mut()).enumerate() {
            if e.contains((p / size) as f64, (p % size) as f64) {
                *g = e.hu;
                *m = e.material == Material::Metal;
            }
        }
    }
    Phantom {
        grid: Tensor::new([size, size], grid).expect("square grid"),
        metal_mask: Mask::new(size, size, metal).expect("square mask"),
        ellipses,
    }
}

fn pick_material(rng: &mut ChaCha8Rng) -> (Material, f32) {
    match rng.random_range(0..10) {
        0..=2 => (Material::SoftTissue, rng.random_range(20.0..80.0)),
        3..=4 => (Material::Fat, rng.random_range(-120.0..-60.0)),
        5 => (Material::Lung, rng.random_range(-900.0..-700.0)),
        _ => (Material::Bone, rng.random_range(300.0..1400.0)),
    }
}

/// Body ellipse, 2–6 internal structures and optionally metal inserts,
/// deterministic in `seed`.
pub fn generate_phantom(seed: u64, size: usize, config: &PhantomConfig) -> Result<Phantom> {
    if size < 32 {
        return Err(Error::arg(format!("phantom size must be ≥ 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let c = (n - 1.0) / 2.0;

    let body = Ellipse {
        center: (c + rng.random_range(-0.02..0.02) * n, c + rng.random_range(-0.02..0.02) * n),
        axes: (
            rng.random_range(config.body_axes.0..config.body_axes.1) * n,
            rng.random_range(config.body_axes.0..config.body_axes.1) * n * 0.85,
        ),
        angle: rng.random_range(-0.3..0.3),
        material: Material::SoftTissue,
        hu: rng.random_range(-10.0..40.0),
    };

    // Point inside the body at fractional radius ≤ `reach`.
    let inside = |rng: &mut ChaCha8Rng, reach: f64| -> (f64, f64) {
        let r = reach * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (u, v) = (r * phi.cos() * body.axes.0, r * phi.sin() * body.axes.1);
        let (s, cth) = body.angle.sin_cos();
        (body.center.0 + u * s + v * cth, body.center.1 + u * cth - v * s)
    };

    let mut ellipses = vec![body.clone()];
    let count = rng.random_range(config.structures.0..=config.structures.1);
    for _ in 0..count {
        let (material, hu) = pick_material(&mut rng);
        let center = inside(&mut rng, 0.6);
        let scale = body.axes.0.min(body.axes.1);
        ellipses.push(Ellipse {
            center,
            axes: (rng.random_range(0.08..0.3) * scale, rng.random_range(0.08..0.3) * scale),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            material,
            hu,
        });
    }

    if let Some(metal) = &config.metal {
        let inserts = rng.random_range(metal.inserts.0..=metal.inserts.1);
        let mut placed: Vec<Ellipse> = Vec::new();
        let mut attempts = 0;
        while placed.len() < inserts {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::arg("could not place metal inserts; pixel range too large"));
            }
            let area = rng.random_range(metal.pixels.0 as f64..=metal.pixels.1 as f64);
            let aspect: f64 = rng.random_range(1.0..2.0);
            let a = (area * aspect / std::f64::consts::PI).sqrt();
            let b = (area / (aspect * std::f64::consts::PI)).sqrt();
            let e = Ellipse {
                center: inside(&mut rng, 0.7),
                axes: (a, b),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                material: Material::Metal,
                hu: rng.random_range(metal.hu.0..=metal.hu.1).clamp(METAL_HU_THRESHOLD + 1.0, MAX_HU),
            };
            let count = e.pixel_count(size);
            if count < metal.pixels.0 || count > metal.pixels.1 {
                continue;
            }
            let clear = (0..size * size).all(|p| {
                let (r, cc) = ((p / size) as f64, (p % size) as f64);
                !e.contains(r, cc) || (body.contains(r, cc) && placed.iter().all(|o| !o.contains(r, cc)))
            });
            if clear {
                placed.push(e);
            }
        }
        ellipses.extend(placed);
    }
    Ok(render(size, ellipses))
}
