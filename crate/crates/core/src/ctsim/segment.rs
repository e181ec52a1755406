//! Metal segmentation by thresholding and its sinogram trace.

use super::{radon, Geometry, Mask, METAL_HU_THRESHOLD};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    /// Pixel count of the largest 4-connected region, used to filter datasets.
    pub largest_component: usize,
}

pub fn segment_metal(image: &Tensor<f32>) -> Result<Segmentation> {
    let [rows, cols] = *image.shape() else {
        return Err(Error::dim(format!("expected an H×W image, got {:?}", image.shape())));
    };
    let data = image.data().iter().map(|&v| v > METAL_HU_THRESHOLD).collect();
    let mask = Mask::new(rows, cols, data)?;
    let largest_component = largest_component(&mask);
    Ok(Segmentation { mask, largest_component })
}

/// Size of the largest 4-connected component.
pub fn largest_component(mask: &Mask) -> usize {
    let (rows, cols) = mask.shape();
    let mut seen = vec![false; rows * cols];
    let mut stack = Vec::new();
    let mut best = 0;
    for start in 0..rows * cols {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (r, c) = (p / cols, p % cols);
            let mut visit = |q: usize| {
                if mask.data()[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - cols);
            }
            if r + 1 < rows {
                visit(p + cols);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < cols {
                visit(p + 1);
            }
        }
        best = best.max(size);
    }
    best
}

/// Sinogram entries whose ray touches the mask.
pub fn project_trace(mask: &Mask, geometry: &Geometry) -> Result<Mask> {
    let (rows, cols) = mask.shape();
    let (na, nd) = (geometry.num_angles, geometry.num_detectors);
    if rows != cols || rows != geometry.image_size {
        return Err(Error::dim(format!("mask {rows}×{cols} does not match geometry size {}", geometry.image_size)));
    }
    if mask.is_empty() {
        return Ok(Mask::empty(na, nd));
    }
    let sino = radon(&mask.to_tensor(), geometry)?;
    Mask::new(na, nd, sino.data.data().iter().map(|&v| v > 1e-6).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_image_has_no_metal() {
        let s = segment_metal(&Tensor::zeros([16, 16])).unwrap();
        assert!(s.mask.is_empty());
        assert_eq!(s.largest_component, 0);
    }

    #[test]
    fn block_component() {
        let img = Tensor::from_fn([16, 16], |p| {
            if (3..8).contains(&(p / 16)) && (5..10).contains(&(p % 16)) {
                3000.0
            } else {
                0.0
            }
        });
        let s = segment_metal(&img).unwrap();
        assert_eq!(s.largest_component, 25);
        assert_eq!(s.mask.count(), 25);
    }

    #[test]
    fn diagonal_neighbours_are_separate() {
        let m = Mask::from_fn(4, 4, |r, c| r == c);
        assert_eq!(largest_component(&m), 1);
    }
}
