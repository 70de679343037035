//! Grayscale image I/O. Pixel `(i, j)` (column, row) is node `(i, j)`;
//! intensities are scaled by the largest representable pixel value.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use imgtransport::fe::{Boundary, Grid, ImageField};

use crate::config::Display;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot decode {path}: {source}")]
    Decode { path: PathBuf, source: image::ImageError },
    #[error("{path}: unsupported pixel format {format}, expected 8- or 16-bit grayscale")]
    Unsupported { path: PathBuf, format: String },
    #[error("{path}: {width}x{height} is not (2^L+1)x(2^L+1); pass --resample to interpolate")]
    Dimensions { path: PathBuf, width: u32, height: u32 },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Core(#[from] imgtransport::Error),
}

/// Row-major intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RawImage {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling onto an `n x n` lattice spanning the same extent.
    pub fn resample(&self, n: usize) -> RawImage {
        let coord = |k: usize, len: usize| -> (usize, usize, f64) {
            if len == 1 {
                return (0, 0, 0.0);
            }
            let s = k as f64 * (len - 1) as f64 / (n - 1) as f64;
            let i0 = (s.floor() as usize).min(len - 2);
            (i0, i0 + 1, s - i0 as f64)
        };
        let mut values = Vec::with_capacity(n * n);
        for y in 0..n {
            let (y0, y1, ty) = coord(y, self.height);
            for x in 0..n {
                let (x0, x1, tx) = coord(x, self.width);
                let top = (1.0 - tx) * self.at(x0, y0) + tx * self.at(x1, y0);
                let bottom = (1.0 - tx) * self.at(x0, y1) + tx * self.at(x1, y1);
                values.push((1.0 - ty) * top + ty * bottom);
            }
        }
        RawImage { width: n, height: n, values }
    }
}

/// `L` with `n = 2^L + 1`.
pub fn level_for(n: usize) -> Option<u32> {
    (n >= 2 && (n - 1).is_power_of_two()).then(|| (n - 1).trailing_zeros())
}

pub fn read_gray(path: &Path) -> Result<RawImage, ImageError> {
    let reader = ImageReader::open(path)
        .map_err(|source| ImageError::Read { path: path.into(), source })?
        .with_guessed_format()
        .map_err(|source| ImageError::Read { path: path.into(), source })?;
    let img = reader.decode().map_err(|source| ImageError::Decode { path: path.into(), source })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|p| p as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|p| p as f64 / 65535.0).collect(),
        other => {
            return Err(ImageError::Unsupported { path: path.into(), format: format!("{:?}", other.color()) });
        }
    };
    Ok(RawImage { width, height, values })
}

/// Reads an image onto the grid matching its size. On periodic grids the
/// last row and column are dropped (they duplicate the first ones).
pub fn load_image(path: &Path, boundary: Boundary, resample: bool) -> Result<ImageField, ImageError> {
    let mut raw = read_gray(path)?;
    let square = raw.width == raw.height;
    let level = match level_for(raw.width) {
        Some(l) if square => l,
        _ if resample => {
            let n = raw.width.max(raw.height).max(3);
            let n = (n - 1).next_power_of_two() + 1;
            raw = raw.resample(n);
            level_for(n).expect("power of two plus one")
        }
        _ => {
            return Err(ImageError::Dimensions { path: path.into(), width: raw.width as u32, height: raw.height as u32 });
        }
    };
    let grid = Grid::new(level, boundary)?;
    let dofs: Vec<f64> = (0..grid.num_dofs())
        .map(|d| {
            let (i, j) = grid.dof_coords(d);
            raw.at(i, j)
        })
        .collect();
    Ok(ImageField::from_dofs(grid, &dofs)?)
}

/// 8-bit pixels, row-major, round to nearest.
pub fn to_pixels(field: &ImageField, display: Display) -> Vec<u8> {
    let n = field.grid().nodes_per_side();
    let (lo, hi) = (field.min(), field.max());
    let map = |v: f64| match display {
        Display::Clamp => v.clamp(0.0, 1.0),
        Display::Rescale if hi > lo => (v - lo) / (hi - lo),
        Display::Rescale => 0.0,
    };
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push((map(field.value(i, j)) * 255.0).round() as u8);
        }
    }
    out
}

/// Writes 8-bit grayscale; the format follows the extension (`.png`, `.pgm`).
pub fn save_image(field: &ImageField, path: &Path, display: Display) -> Result<(), ImageError> {
    let n = field.grid().nodes_per_side() as u32;
    image::save_buffer(path, &to_pixels(field, display), n, n, image::ExtendedColorType::L8)
        .map_err(|source| ImageError::Write { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels() {
        assert_eq!(level_for(3), Some(1));
        assert_eq!(level_for(129), Some(7));
        assert_eq!(level_for(128), None);
        assert_eq!(level_for(1), None);
    }

    #[test]
    fn pixel_mapping() {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        assert!(to_pixels(&ImageField::constant(g, 0.5), Display::Clamp).iter().all(|p| *p == 128));
        assert!(to_pixels(&ImageField::constant(g, -0.2), Display::Clamp).iter().all(|p| *p == 0));
        assert!(to_pixels(&ImageField::constant(g, 1.0), Display::Clamp).iter().all(|p| *p == 255));
        let ramp = ImageField::from_fn(g, |x| 3.0 * x[0] - 1.0);
        let px = to_pixels(&ramp, Display::Rescale);
        assert_eq!((px[0], px[4]), (0, 255));
    }

    #[test]
    fn resampling_keeps_linear_ramps() {
        let raw = RawImage { width: 4, height: 2, values: vec![0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0] };
        let r = raw.resample(5);
        assert_eq!(r.values[..5], [0.0, 0.75, 1.5, 2.25, 3.0]);
    }
}
