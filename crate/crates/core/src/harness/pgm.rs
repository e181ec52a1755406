//! 16-bit binary PGM export for viewing.

use std::fs;
use std::path::Path;

use crate::ctsim::WINDOW_HU;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps the HU display window onto `0..=65535`, clamping outside it.
pub fn encode_pgm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w] = *image.shape() else {
        return Err(Error::dim(format!("expected an H×W image, got {:?}", image.shape())));
    };
    let (lo, hi) = WINDOW_HU;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in image.data() {
        let unit = ((v.clamp(lo, hi) - lo) / (hi - lo)) as f64;
        out.extend_from_slice(&((unit * 65535.0).round() as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}
