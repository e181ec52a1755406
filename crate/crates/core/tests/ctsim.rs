use std::collections::HashSet;

use adn_core::ctsim::*;
use adn_core::harness::metrics::score_hu;
use adn_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Disk of density 1 with 8×8 supersampled edges, centred on the grid.
fn soft_disk(n: usize, r: f64) -> Tensor<f32> {
    let c = (n as f64 - 1.0) / 2.0;
    Tensor::from_fn([n, n], |p| {
        let (i, j) = ((p / n) as f64, (p % n) as f64);
        let mut inside = 0;
        for u in 0..8 {
            for v in 0..8 {
                let y = i - 0.5 + (u as f64 + 0.5) / 8.0 - c;
                let x = j - 0.5 + (v as f64 + 0.5) / 8.0 - c;
                if x * x + y * y <= r * r {
                    inside += 1;
                }
            }
        }
        inside as f32 / 64.0
    })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn uniform(shape: [usize; 2], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn disk_projection_matches_chord_length() {
    let geom = Geometry::for_image(128, 180);
    let r = 40.0;
    let sino = radon(&soft_disk(128, r), &geom).unwrap();
    let mut worst = 0.0f64;
    for a in 0..geom.num_angles {
        for d in 0..geom.num_detectors {
            let s = geom.detector_offset(d);
            if s.abs() >= 0.9 * r {
                continue;
            }
            let chord = 2.0 * (r * r - s * s).sqrt();
            worst = worst.max((sino.row(a)[d] as f64 - chord).abs() / chord);
        }
    }
    assert!(worst < 0.02, "worst relative chord error {worst}");
}

#[test]
fn adjoint_identity() {
    let geom = Geometry::for_image(128, 180);
    let x = uniform([128, 128], 1);
    let y = uniform([geom.num_angles, geom.num_detectors], 2);
    let rx = radon(&x, &geom).unwrap();
    let rty = radon_adjoint(&Sinogram::new(y.clone(), geom).unwrap()).unwrap();
    let lhs = dot(rx.data.data(), y.data());
    let rhs = dot(x.data(), rty.data());
    let err = (lhs - rhs).abs() / (norm(rx.data.data()) * norm(y.data()));
    assert!(err < 1e-3, "adjoint error {err}");
}

/// Sum of broad Gaussians inside the inscribed disk.
fn smooth_phantom(n: usize) -> Tensor<f32> {
    let c = (n as f64 - 1.0) / 2.0;
    let blobs = [(0.0, 0.0, 0.35, 1.0), (0.2, -0.15, 0.15, 0.5), (-0.25, 0.1, 0.12, -0.3), (0.05, 0.3, 0.1, 0.4)];
    Tensor::from_fn([n, n], |p| {
        let (y, x) = (((p / n) as f64 - c) / n as f64, ((p % n) as f64 - c) / n as f64);
        blobs
            .iter()
            .map(|&(by, bx, s, h)| h * (-((y - by).powi(2) + (x - bx).powi(2)) / (2.0 * s * s)).exp())
            .sum::<f64>() as f32
            * if (x * x + y * y).sqrt() < 0.45 {
                1.0
            } else {
                (-(((x * x + y * y).sqrt() - 0.45) / 0.02).powi(2)).exp() as f32
            }
    })
}

#[test]
fn fbp_round_trip_of_smooth_phantom() {
    let n = 128;
    let img = smooth_phantom(n);
    let geom = Geometry::for_image(n, 180);
    let rec = fbp(&radon(&img, &geom).unwrap(), RampFilter::RamLak).unwrap();
    assert!(!rec.degraded);
    let c = (n as f64 - 1.0) / 2.0;
    let (mut err, mut total) = (0.0f64, 0.0f64);
    for p in 0..n * n {
        let (y, x) = ((p / n) as f64 - c, (p % n) as f64 - c);
        if (x * x + y * y).sqrt() > 0.8 * c {
            continue;
        }
        err += (rec.image.data()[p] as f64 - img.data()[p] as f64).powi(2);
        total += (img.data()[p] as f64).powi(2);
    }
    let rel = (err / total).sqrt();
    assert!(rel < 0.05, "relative RMSE {rel}");
}

#[test]
fn fbp_is_linear() {
    let geom = Geometry::for_image(32, 60);
    let s1 = uniform([60, geom.num_detectors], 3);
    let s2 = uniform([60, geom.num_detectors], 4);
    let (a, b) = (0.7f32, -1.3f32);
    let mixed = Tensor::from_fn([60, geom.num_detectors], |i| a * s1.data()[i] + b * s2.data()[i]);
    let rec = |t: &Tensor<f32>| fbp(&Sinogram::new(t.clone(), geom.clone()).unwrap(), RampFilter::Hann).unwrap().image;
    let (r1, r2, rm) = (rec(&s1), rec(&s2), rec(&mixed));
    for i in 0..rm.numel() {
        let expect = a * r1.data()[i] + b * r2.data()[i];
        assert!((rm.data()[i] - expect).abs() < 1e-4);
    }
}

#[test]
fn single_bin_noiseless_projection_is_the_line_integral() {
    let n = 64;
    let phantom = generate_phantom(5, n, &PhantomConfig::for_size(n)).unwrap().without_metal();
    let spectrum = Spectrum::monochromatic(n);
    let geom = Geometry::for_image(n, 90);
    let poly = polychromatic_project(&phantom, &geom, &spectrum, f64::INFINITY, 0).unwrap();
    let mu = phantom.grid.map(|hu| hu_to_mu(hu, spectrum.mu_water()) as f32);
    let mono = radon(&mu, &geom).unwrap();
    let worst = poly.data.max_abs_diff(&mono.data);
    assert!(worst < 1e-4, "max difference {worst}");
}

/// Water at 50 and 100 keV, equal weights.
fn two_bin(n: usize) -> Spectrum {
    Spectrum::from_per_cm(
        &[(50.0, 0.5, [0.2269, 0.573, 5.0]), (100.0, 0.5, [0.1707, 0.356, 1.49])],
        FIELD_OF_VIEW_CM / n as f64,
    )
    .unwrap()
}

fn water_disk(n: usize, radius: f64) -> Phantom {
    let c = (n as f64 - 1.0) / 2.0;
    render(
        n,
        vec![Ellipse { center: (c, c), axes: (radius, radius), angle: 0.0, material: Material::SoftTissue, hu: 0.0 }],
    )
}

#[test]
fn two_bin_central_ray_shows_beam_hardening() {
    let n = 128;
    let spectrum = two_bin(n);
    let geom = Geometry::for_image(n, 4);
    let r = 50.0;
    let sino = polychromatic_project(&water_disk(n, r), &geom, &spectrum, f64::INFINITY, 0).unwrap();
    let mid = geom.num_detectors / 2;
    let measured = sino.row(0)[mid] as f64;
    // The angle-0 central ray runs between the two middle columns, which
    // hold the same number of water pixels.
    let column: f64 = water_disk(n, r).grid.data().chunks(n).map(|row| if row[n / 2] == 0.0 { 1.0 } else { 0.0 }).sum();
    let px = FIELD_OF_VIEW_CM / n as f64;
    let l = column * px;
    let closed_form = -(0.5 * (-0.2269 * l).exp() + 0.5 * (-0.1707 * l).exp()).ln();
    let mono = spectrum.mu_water() * column;
    assert!(measured < mono, "{measured} vs mono {mono}");
    assert!((measured - closed_form).abs() / closed_form < 0.02, "{measured} vs {closed_form}");
}

#[test]
fn water_disk_reconstruction_cups() {
    let n = 128;
    let spectrum = two_bin(n);
    let geom = Geometry::for_image(n, 180);
    let r = 0.4 * n as f64;
    let c = (n as f64 - 1.0) / 2.0;
    for seed in 0..10 {
        let sino = polychromatic_project(&water_disk(n, r), &geom, &spectrum, 1e6, seed).unwrap();
        let hu = fbp(&sino, RampFilter::RamLak).unwrap().image.map(|v| mu_to_hu(v as f64, spectrum.mu_water()));
        let (mut centre, mut nc, mut ring, mut nr) = (0.0, 0, 0.0, 0);
        for p in 0..n * n {
            let d = (((p / n) as f64 - c).powi(2) + ((p % n) as f64 - c).powi(2)).sqrt() / r;
            if d < 0.1 {
                centre += hu.data()[p] as f64;
                nc += 1;
            } else if (0.6..0.8).contains(&d) {
                ring += hu.data()[p] as f64;
                nr += 1;
            }
        }
        let (centre, ring) = (centre / nc as f64, ring / nr as f64);
        assert!(centre < ring, "seed {seed}: centre {centre} ring {ring}");
    }
}

#[test]
fn noise_is_seeded() {
    let n = 32;
    let phantom = generate_phantom(1, n, &PhantomConfig::for_size(n)).unwrap();
    let geom = Geometry::for_image(n, 20);
    let s = Spectrum::standard(n);
    let a = polychromatic_project(&phantom, &geom, &s, 1e4, 9).unwrap();
    let b = polychromatic_project(&phantom, &geom, &s, 1e4, 9).unwrap();
    let c = polychromatic_project(&phantom, &geom, &s, 1e4, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn thousand_phantoms_respect_ranges() {
    let n = 128;
    let cfg = PhantomConfig::for_size(n);
    let metal = cfg.metal.clone().unwrap();
    for seed in 0..1000 {
        let p = generate_phantom(seed, n, &cfg).unwrap();
        assert!(p.grid.data().iter().all(|&v| (-1000.0..=4000.0).contains(&v)), "seed {seed}");
        let inserts: Vec<&Ellipse> = p.ellipses.iter().filter(|e| e.material == Material::Metal).collect();
        assert!((metal.inserts.0..=metal.inserts.1).contains(&inserts.len()));
        let mut union = vec![false; n * n];
        for e in &inserts {
            let count = (0..n * n).filter(|&q| e.contains((q / n) as f64, (q % n) as f64)).count();
            assert!((metal.pixels.0..=metal.pixels.1).contains(&count), "seed {seed}: insert of {count} px");
            for (q, u) in union.iter_mut().enumerate() {
                *u |= e.contains((q / n) as f64, (q % n) as f64);
            }
        }
        assert_eq!(p.metal_mask.data(), &union[..], "seed {seed}");
        for (q, &m) in union.iter().enumerate() {
            if m {
                assert!(p.grid.data()[q] >= 2500.0);
            }
        }
    }
}

/// Component sizes by repeated union-find merging.
fn component_sizes(mask: &[bool], rows: usize, cols: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..mask.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !mask[i] {
                continue;
            }
            for j in [(r + 1 < rows).then(|| i + cols), (c + 1 < cols).then(|| i + 1)].into_iter().flatten() {
                if mask[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut sizes = std::collections::HashMap::new();
    for i in 0..mask.len() {
        if mask[i] {
            *sizes.entry(find(&mut parent, i)).or_insert(0) += 1;
        }
    }
    sizes.into_values().collect()
}

proptest! {
    #[test]
    fn largest_component_matches_union_find(bits in proptest::collection::vec(any::<bool>(), 12 * 15)) {
        let mask = Mask::new(12, 15, bits.clone()).unwrap();
        let expected = component_sizes(&bits, 12, 15).into_iter().max().unwrap_or(0);
        prop_assert_eq!(largest_component(&mask), expected);
    }

    #[test]
    fn union_of_traces(seed in 0u64..1000) {
        let n = 32;
        let geom = Geometry::for_image(n, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blob = || {
            let (r0, c0) = (rng.random_range(4..28) as f64, rng.random_range(4..28) as f64);
            let rad = rng.random_range(1.0..4.0);
            Mask::from_fn(n, n, |r, c| (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2) <= rad * rad)
        };
        let (a, b) = (blob(), blob());
        let ta = project_trace(&a, &geom).unwrap();
        let tb = project_trace(&b, &geom).unwrap();
        let tu = project_trace(&a.union(&b).unwrap(), &geom).unwrap();
        prop_assert_eq!(tu, ta.union(&tb).unwrap());
    }
}

#[test]
fn segmentation_of_blocks() {
    let mut img = Tensor::zeros([20, 20]);
    for r in 2..7 {
        for c in 3..8 {
            img.data_mut()[r * 20 + c] = 3000.0;
        }
    }
    img.data_mut()[15 * 20 + 15] = 2600.0;
    img.data_mut()[16 * 20 + 16] = 2500.0;
    let seg = segment_metal(&img).unwrap();
    assert_eq!(seg.mask.count(), 26);
    assert_eq!(seg.largest_component, 25);
}

#[test]
fn empty_mask_has_empty_trace() {
    let geom = Geometry::for_image(32, 10);
    assert!(project_trace(&Mask::empty(32, 32), &geom).unwrap().is_empty());
}

#[test]
fn disk_trace_is_one_interval_of_the_diameter() {
    let n = 64;
    let geom = Geometry::for_image(n, 36);
    let c = (n as f64 - 1.0) / 2.0;
    let r = 6.0;
    let mask = Mask::from_fn(n, n, |i, j| (i as f64 - c).powi(2) + (j as f64 - c).powi(2) <= r * r);
    let trace = project_trace(&mask, &geom).unwrap();
    let nd = geom.num_detectors;
    for a in 0..geom.num_angles {
        let row: Vec<usize> = (0..nd).filter(|&d| trace.get(a, d)).collect();
        let (lo, hi) = (row[0], *row.last().unwrap());
        assert_eq!(row.len(), hi - lo + 1, "angle {a}: trace not contiguous");
        let width = row.len() as f64 * geom.detector_spacing;
        // Bilinear taps reach one pixel past the boundary on each side.
        assert!((width - 2.0 * r).abs() <= 3.0, "angle {a}: width {width}");
    }
}

#[test]
fn metal_free_pair_differs_by_noise_only() {
    let mut cfg = SynthConfig::new(64);
    cfg.metal_prob = 0.0;
    cfg.photons = 1e9;
    for seed in 0..5 {
        let s = synthesize_pair(seed, &cfg).unwrap();
        assert!(s.metal_mask.is_empty());
        let (psnr, _) = score_hu(&s.xa, &s.x, Some(&s.metal_mask)).unwrap();
        assert!(psnr > 30.0, "seed {seed}: {psnr} dB");
    }
}

#[test]
fn pairs_are_reproducible() {
    let cfg = SynthConfig::new(32);
    assert_eq!(synthesize_pair(3, &cfg).unwrap(), synthesize_pair(3, &cfg).unwrap());
    let s = synthesize_pair(3, &cfg).unwrap();
    assert!(s.x.data().iter().all(|&v| v < 2500.0), "clean image must not contain metal");
}

fn dir_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for group in ["", "trainA", "trainB", "test"] {
        let dir = root.join(group);
        let mut names: Vec<_> =
            std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn dataset_layout_and_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::new(32);
    let entries = write_dataset(a.path(), 12, 7, &cfg).unwrap();
    write_dataset(b.path(), 12, 7, &cfg).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(read_manifest(a.path()).unwrap(), entries);

    let names = |g: &str| -> HashSet<String> {
        std::fs::read_dir(a.path().join(g)).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect()
    };
    assert!(names("trainA").iter().all(|n| n.ends_with("_xa.adnt")));
    assert!(names("trainB").iter().all(|n| n.ends_with("_x.adnt")));
    let test = names("test");
    assert_eq!(test.len(), 3);
    assert_eq!(names("trainA").len() + names("trainB").len(), 11);
}
