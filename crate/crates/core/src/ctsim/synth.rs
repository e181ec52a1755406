//! Paired artifact/clean sample synthesis and the on-disk dataset layout.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{
    fbp, generate_phantom, hu_to_mu, mu_to_hu, polychromatic_project, radon, restamp, Geometry, Mask, Phantom,
    PhantomConfig, RampFilter, Spectrum, AIR_HU, MAX_HU,
};
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub geometry: Geometry,
    pub spectrum: Spectrum,
    /// Photons per detector element; infinite disables noise.
    pub photons: f64,
    pub phantom: PhantomConfig,
    /// Probability that a sample's artifact branch receives metal.
    pub metal_prob: f64,
    pub filter: RampFilter,
}

impl SynthConfig {
    /// 180 views, five-bin spectrum, 10⁶ photons.
    pub fn new(size: usize) -> Self {
        SynthConfig {
            size,
            geometry: Geometry::for_image(size, 180),
            spectrum: Spectrum::standard(size),
            photons: 1e6,
            phantom: PhantomConfig::for_size(size),
            metal_prob: 1.0,
            filter: RampFilter::RamLak,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub seed: u64,
    /// Artifact-affected image in HU, metal re-stamped.
    pub xa: Tensor<f32>,
    /// Artifact-free image in HU, no metal.
    pub x: Tensor<f32>,
    pub metal_mask: Mask,
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn clamp_hu(t: Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(AIR_HU, MAX_HU))
}

/// FBP of the noiseless monochromatic sinogram, in HU.
fn mono_reconstruction(phantom: &Phantom, config: &SynthConfig) -> Result<Tensor<f32>> {
    let mw = config.spectrum.mu_water();
    let mu = phantom.grid.map(|hu| hu_to_mu(hu, mw).max(0.0) as f32);
    let sino = radon(&mu, &config.geometry)?;
    let rec = fbp(&sino, config.filter)?;
    Ok(clamp_hu(rec.image.map(|v| mu_to_hu(v as f64, mw))))
}

pub fn synthesize_pair(seed: u64, config: &SynthConfig) -> Result<PairedSample> {
    if !(0.0..=1.0).contains(&config.metal_prob) {
        return Err(Error::arg("metal probability must lie in [0, 1]"));
    }
    let with_metal = config.phantom.metal.is_some()
        && ((splitmix64(seed ^ 0x6d65_74616c) >> 11) as f64 / (1u64 << 53) as f64) < config.metal_prob;
    let phantom_cfg = if with_metal { config.phantom.clone() } else { config.phantom.clone().without_metal() };
    let phantom = generate_phantom(seed, config.size, &phantom_cfg)?;
    let clean = phantom.without_metal();
    let x = mono_reconstruction(&clean, config)?;

    let sino = polychromatic_project(&phantom, &config.geometry, &config.spectrum, config.photons, splitmix64(seed))?;
    let rec = fbp(&sino, config.filter)?;
    let mw = config.spectrum.mu_water();
    let xa = rec.image.map(|v| mu_to_hu(v as f64, mw));
    let xa = clamp_hu(restamp(&xa, &phantom.grid, &phantom.metal_mask)?);

    Ok(PairedSample { id: String::new(), seed, xa, x, metal_mask: phantom.metal_mask })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitGroup {
    TrainA,
    TrainB,
    Test,
}

impl SplitGroup {
    pub fn dir(self) -> &'static str {
        match self {
            SplitGroup::TrainA => "trainA",
            SplitGroup::TrainB => "trainB",
            SplitGroup::Test => "test",
        }
    }
}

impl fmt::Display for SplitGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir())
    }
}

impl std::str::FromStr for SplitGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainA" => Ok(SplitGroup::TrainA),
            "trainB" => Ok(SplitGroup::TrainB),
            "test" => Ok(SplitGroup::Test),
            _ => Err(Error::arg(format!("unknown split group {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub group: SplitGroup,
    pub metal_px: usize,
}

const MANIFEST_HEADER: &str = "id\tseed\tgroup\tmetal_px";

/// One ninth of the samples (at least one) form the test set; the rest are
/// split evenly into the artifact and clean training groups.
fn assign_group(index: usize, count: usize) -> SplitGroup {
    let test = (count / 9).max(1);
    if index < test {
        SplitGroup::Test
    } else if index - test < (count - test).div_ceil(2) {
        SplitGroup::TrainA
    } else {
        SplitGroup::TrainB
    }
}

/// Writes `count` samples under `root` and returns the manifest rows.
/// Output bytes depend only on `(count, seed, config)`.
pub fn write_dataset(root: &Path, count: usize, seed: u64, config: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    if count < 3 {
        return Err(Error::arg("a dataset needs at least 3 samples"));
    }
    for g in [SplitGroup::TrainA, SplitGroup::TrainB, SplitGroup::Test] {
        let dir = root.join(g.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let samples: Vec<(SplitGroup, PairedSample)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut s = synthesize_pair(splitmix64(seed.wrapping_add(i as u64)), config)?;
            s.id = format!("s{i:05}");
            Ok((assign_group(i, count), s))
        })
        .collect::<Result<_>>()?;

    let mut manifest = vec![MANIFEST_HEADER.to_string()];
    let mut entries = Vec::with_capacity(count);
    for (group, s) in samples {
        let dir = root.join(group.dir());
        match group {
            SplitGroup::TrainA => io::write(dir.join(format!("{}_xa.adnt", s.id)), &s.xa)?,
            SplitGroup::TrainB => io::write(dir.join(format!("{}_x.adnt", s.id)), &s.x)?,
            SplitGroup::Test => {
                io::write(dir.join(format!("{}_xa.adnt", s.id)), &s.xa)?;
                io::write(dir.join(format!("{}_x.adnt", s.id)), &s.x)?;
                io::write(dir.join(format!("{}_mask.adnt", s.id)), &s.metal_mask.to_tensor())?;
            }
        }
        let entry = ManifestEntry { id: s.id, seed: s.seed, group, metal_px: s.metal_mask.count() };
        manifest.push(format!("{}\t{}\t{}\t{}", entry.id, entry.seed, entry.group, entry.metal_px));
        entries.push(entry);
    }
    let path = root.join("manifest.tsv");
    fs::write(&path, manifest.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join("manifest.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, message: String| Error::Config { line, message };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let [id, seed, group, metal] = f[..] else {
                return Err(bad(i + 1, format!("expected 4 columns, got {}", f.len())));
            };
            Ok(ManifestEntry {
                id: id.to_string(),
                seed: seed.parse().map_err(|e| bad(i + 1, format!("seed: {e}")))?,
                group: group.parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
                metal_px: metal.parse().map_err(|e| bad(i + 1, format!("metal_px: {e}")))?,
            })
        })
        .collect()
}
