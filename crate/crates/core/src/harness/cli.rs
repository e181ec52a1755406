//! The `adn` command line. [`run`] returns the process exit status.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::eval::{run_eval, Corrector, MethodName};
use super::pgm::write_pgm;
use crate::adn::{read_checkpoint, transfer_artifacts};
use crate::baselines::Method;
use crate::ctsim::{
    hu_to_unit, radon, radon_adjoint, segment_metal, unit_to_hu, write_dataset, Geometry, Sinogram, SynthConfig,
};
use crate::error::{Error, Result};
use crate::tensor::gradcheck::{random_tensor, suite};
use crate::tensor::{io, Tensor};
use crate::train::{run_training, TrainConfig, UnpairedSampler, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adn", version, about = "CT metal artifact reduction by artifact disentanglement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of artifact-affected and clean images.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        /// Probability that a sample carries metal.
        #[arg(long)]
        metal_prob: Option<f64>,
    },
    /// Train a model on the trainA/trainB groups of a dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Remove artifacts from one image or every image in a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the artifacts of one image to a clean one.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct every image in a directory with a sinogram-inpainting baseline.
    Baseline {
        #[arg(long)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a method on the test split; writes a TSV.
    Eval {
        #[arg(long)]
        method: MethodName,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference and projector-adjoint checks.
    Selfcheck,
}

/// Parses `args` (program name first), runs the command and reports errors
/// on stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Images to process for a directory argument: the `*_xa.adnt` files if
/// there are any, otherwise every `.adnt` file except masks.
fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut all: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "adnt"))
        .collect();
    all.sort();
    let name = |p: &PathBuf| p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
    let affected: Vec<PathBuf> = all.iter().filter(|p| name(p).ends_with("_xa.adnt")).cloned().collect();
    Ok(if affected.is_empty() {
        all.into_iter().filter(|p| !name(p).ends_with("_mask.adnt")).collect()
    } else {
        affected
    })
}

fn write_image(out_dir: &Path, source: &Path, image: &Tensor<f32>) -> Result<()> {
    let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    io::write(out_dir.join(format!("{stem}.adnt")), image)?;
    write_pgm(out_dir.join(format!("{stem}.pgm")), image)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Synthesize { out, count, size, seed, metal_prob } => {
            let mut cfg = SynthConfig::new(size);
            if let Some(p) = metal_prob {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::arg("--metal-prob must lie in [0, 1]"));
                }
                cfg.metal_prob = p;
            }
            let entries = write_dataset(&out, count, seed, &cfg)?;
            eprintln!("wrote {} samples to {}", entries.len(), out.display());
        }
        Command::Train { config, data, out, variant, resume } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let mut cfg = TrainConfig::parse(&text)?;
            cfg.data = Some(data.clone());
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let resume = resume.map(read_checkpoint).transpose()?;
            let sampler = UnpairedSampler::from_dataset(&data)?;
            create_dir(&out)?;
            let cfg_path = out.join("config.txt");
            fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
            let total = cfg.steps;
            run_training(cfg, &sampler, &out, resume, |r| {
                if r.step % 100 == 0 || r.step == total {
                    eprintln!("step {}/{total}: total {:.4}", r.step, r.total);
                }
            })?;
        }
        Command::Infer { ckpt, input, out } => {
            let params = read_checkpoint(&ckpt)?.params;
            create_dir(&out)?;
            let adn = Corrector::Adn(&params);
            for path in input_images(&input)? {
                let image = io::read(&path)?;
                let metal = segment_metal(&image)?.mask;
                write_image(&out, &path, &adn.correct(&image, &metal)?)?;
            }
        }
        Command::Transfer { ckpt, artifact, clean, out } => {
            let params = read_checkpoint(&ckpt)?.params;
            let (xa, y) = (io::read(&artifact)?, io::read(&clean)?);
            let [h, w] = *xa.shape() else {
                return Err(Error::dim(format!("expected an H×W image, got {:?}", xa.shape())));
            };
            let as_batch = |t: &Tensor<f32>| hu_to_unit(t).reshape([1, 1, h, w]);
            let moved = transfer_artifacts(&params, &as_batch(&xa)?, &as_batch(&y)?)?;
            let moved = unit_to_hu(&moved.reshape([h, w])?);
            io::write(&out, &moved)?;
            write_pgm(out.with_extension("pgm"), &moved)?;
        }
        Command::Baseline { method, input, out } => {
            create_dir(&out)?;
            let corrector = Corrector::Baseline(method);
            for path in input_images(&input)? {
                let image = io::read(&path)?;
                let metal = segment_metal(&image)?.mask;
                write_image(&out, &path, &corrector.correct(&image, &metal)?)?;
            }
        }
        Command::Eval { method, ckpt, data, out } => {
            let params = match (method, ckpt) {
                (MethodName::Adn, Some(c)) => Some(read_checkpoint(&c)?.params),
                (MethodName::Adn, None) => return Err(Error::arg("eval --method adn needs --ckpt")),
                _ => None,
            };
            let corrector = match method {
                MethodName::Adn => Corrector::Adn(params.as_ref().expect("checked above")),
                MethodName::Li => Corrector::Baseline(Method::Li),
                MethodName::Nmar => Corrector::Baseline(Method::Nmar),
                MethodName::Identity => Corrector::Identity,
            };
            let report = run_eval(&corrector, &data)?;
            fs::write(&out, report.to_tsv()).map_err(|e| Error::io(&out, e))?;
            if let Some((p, s)) = report.mean() {
                eprintln!("{method}: mean PSNR {p:.3} dB, SSIM {s:.2}");
            }
            if !report.missing.is_empty() {
                eprintln!("skipped test pairs with missing files: {}", report.missing.join(", "));
                return Ok(EXIT_FAILURE);
            }
        }
        Command::Selfcheck => return selfcheck(),
    }
    Ok(EXIT_OK)
}

fn selfcheck() -> Result<i32> {
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    for case in suite::<f32>().into_iter().filter(|c| !c.composite) {
        let worst = case.run(100, 1e-3)?.iter().map(|r| r.max_element_error).fold(0.0, f64::max);
        line(&format!("gradient f32 {}", case.name), worst < 1e-2, format!("max element error {worst:.2e}"));
    }
    for case in suite::<f64>() {
        let worst = case.run(200, 1e-5)?.iter().map(|r| r.aggregate_error).fold(0.0, f64::max);
        line(&format!("gradient f64 {}", case.name), worst < 1e-4, format!("aggregate error {worst:.2e}"));
    }
    let geom = Geometry::for_image(64, 90);
    let x = random_tensor::<f32>(&[64, 64], 0.0, 1.0, 1);
    let y = random_tensor::<f32>(&[geom.num_angles, geom.num_detectors], 0.0, 1.0, 2);
    let y_data = y.data().to_vec();
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>();
    let lhs = dot(radon(&x, &geom)?.data.data(), &y_data);
    let rhs = dot(x.data(), radon_adjoint(&Sinogram::new(y, geom.clone())?)?.data());
    let err = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
    line("projector adjoint", err < 1e-3, format!("relative error {err:.2e}"));
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

/// Caps rayon's global pool at `ADN_THREADS` when set. Must run before any
/// parallel work.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ADN_THREADS") else { return Ok(()) };
    let n: usize =
        v.trim().parse().map_err(|_| Error::arg(format!("ADN_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::arg("ADN_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::arg(format!("thread pool: {e}")))
}
