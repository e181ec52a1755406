//! Scores a correction method over the test split of a dataset.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::score_hu;
use crate::adn::{remove_artifacts, ModelParams};
use crate::baselines::{reconstruct_baseline, BaselineConfig, Method};
use crate::ctsim::{hu_to_unit, restamp, unit_to_hu, Mask};
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

/// Names accepted by `eval --method`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodName {
    Adn,
    Li,
    Nmar,
    Identity,
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodName::Adn => "adn",
            MethodName::Li => "li",
            MethodName::Nmar => "nmar",
            MethodName::Identity => "identity",
        })
    }
}

impl FromStr for MethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adn" => Ok(MethodName::Adn),
            "li" => Ok(MethodName::Li),
            "nmar" => Ok(MethodName::Nmar),
            "identity" => Ok(MethodName::Identity),
            _ => Err(Error::arg(format!("unknown method {s:?}; expected adn, li, nmar or identity"))),
        }
    }
}

/// A correction method ready to run.
pub enum Corrector<'a> {
    Identity,
    Baseline(Method),
    Adn(&'a ModelParams<f32>),
}

impl Corrector<'_> {
    pub fn name(&self) -> MethodName {
        match self {
            Corrector::Identity => MethodName::Identity,
            Corrector::Baseline(Method::Li) => MethodName::Li,
            Corrector::Baseline(Method::Nmar) => MethodName::Nmar,
            Corrector::Adn(_) => MethodName::Adn,
        }
    }

    /// Corrected HU image with the metal pixels copied back from the input.
    pub fn correct(&self, xa_hu: &Tensor<f32>, metal: &Mask) -> Result<Tensor<f32>> {
        let out = match self {
            Corrector::Identity => xa_hu.clone(),
            Corrector::Baseline(m) => reconstruct_baseline(xa_hu, *m, &BaselineConfig::for_size(xa_hu.shape()[0]))?,
            Corrector::Adn(p) => {
                let [h, w] = *xa_hu.shape() else {
                    return Err(Error::dim(format!("expected an H×W image, got {:?}", xa_hu.shape())));
                };
                let input = hu_to_unit(xa_hu).reshape([1, 1, h, w])?;
                unit_to_hu(&remove_artifacts(p, &input)?.reshape([h, w])?)
            }
        };
        restamp(&out, xa_hu, metal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub method: MethodName,
    pub psnr_db: f64,
    pub ssim_x100: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by id.
    pub records: Vec<EvalRecord>,
    /// Test ids skipped because a file was missing.
    pub missing: Vec<String>,
}

impl EvalReport {
    pub fn mean(&self) -> Option<(f64, f64)> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len() as f64;
        let p = self.records.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let s = self.records.iter().map(|r| r.ssim_x100).sum::<f64>() / n;
        Some((p, s))
    }

    /// Header, one row per record, and a final `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tmethod\tpsnr_db\tssim_x100\n");
        for r in &self.records {
            out += &format!("{}\t{}\t{:.6}\t{:.6}\n", r.id, r.method, r.psnr_db, r.ssim_x100);
        }
        if let (Some((p, s)), Some(r)) = (self.mean(), self.records.first()) {
            out += &format!("mean\t{}\t{p:.6}\t{s:.6}\n", r.method);
        }
        out
    }
}

/// Ids of the test pairs, from the `*_xa.adnt` files in `root/test`.
pub fn test_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("test");
    let mut ids: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_xa.adnt")).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}

fn test_file(root: &Path, id: &str, kind: &str) -> PathBuf {
    root.join("test").join(format!("{id}_{kind}.adnt"))
}

/// Masked PSNR/SSIM of `method` against the clean image of every test pair.
/// Pairs with a missing file are listed in `missing` and skipped.
pub fn run_eval(method: &Corrector<'_>, root: &Path) -> Result<EvalReport> {
    let ids = test_ids(root)?;
    let (present, missing): (Vec<String>, Vec<String>) =
        ids.into_iter().partition(|id| ["x", "mask"].iter().all(|k| test_file(root, id, k).is_file()));
    let records = present
        .par_iter()
        .map(|id| {
            let xa = io::read(test_file(root, id, "xa"))?;
            let x = io::read(test_file(root, id, "x"))?;
            let mask = Mask::from_tensor(&io::read(test_file(root, id, "mask"))?)?;
            let out = method.correct(&xa, &mask)?;
            let (psnr_db, ssim_x100) = score_hu(&out, &x, Some(&mask))?;
            Ok(EvalRecord { id: id.clone(), method: method.name(), psnr_db, ssim_x100 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { records, missing })
}
