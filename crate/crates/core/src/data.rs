//! Dataset loading and generation.
//!
//! Real data comes from IDX image files (the MNIST container format).
//! Because the toolkit is typically exercised in environments without the
//! MNIST files, [`synthetic_images`] generates an unlimited deterministic
//! stand-in with the same geometry: 28x28 grayscale images of centered
//! pen strokes, exact-zero borders, and byte-quantized intensities.

use crate::matrix::Matrix;
use crate::rng::{self, stream};
use crate::{Error, Result};
use rand::Rng;
use std::path::Path;

/// Unlabeled sample collection. Autoencoder targets equal the inputs, so no
/// label storage exists anywhere in the crate.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Matrix,
}

impl Dataset {
    pub fn new(samples: Matrix) -> Self {
        Dataset { samples }
    }

    pub fn count(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    /// Copy of the first `n` samples, used to carve fixed evaluation batches.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.count());
        let mut m = Matrix::zeros(n, self.dim());
        for i in 0..n {
            m.row_mut(i).copy_from_slice(self.sample(i));
        }
        Dataset::new(m)
    }
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// Load an IDX3 image file (big-endian magic 0x00000803, count, rows, cols,
/// then one unsigned byte per pixel). Pixels are scaled to `[0, 1]` by 255.
/// Malformed files produce errors naming the exact byte offset.
pub fn load_mnist_idx(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(&bytes, 4)? as usize;
    let rows = read_be_u32(&bytes, 8)? as usize;
    let cols = read_be_u32(&bytes, 12)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "pixel data truncated: expected {expected} bytes total, found {}",
                bytes.len()
            ),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            offset: expected as u64,
            message: format!("{} trailing bytes after pixel data", bytes.len() - expected),
        });
    }
    let data: Vec<f64> = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Dataset::new(Matrix::from_vec(count, dim, data)?))
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("file ends inside the 4-byte field at offset {offset}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Uniform `[0, 1)` values, each zeroed independently with probability
/// `sparsity`. Deterministic for a given seed.
pub fn synthetic_dataset(seed: u64, count: usize, dim: usize, sparsity: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity must be in [0, 1], got {sparsity}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    let mut rng = rng::for_stream(seed, stream::DATA);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        // Two draws per cell regardless of outcome keeps the stream aligned.
        let value: f64 = rng.random();
        let gate: f64 = rng.random();
        data.push(if gate < sparsity { 0.0 } else { value });
    }
    Ok(Dataset::new(Matrix::from_vec(count, dim, data)?))
}

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;

// Stroke dictionary geometry. Thirty-five cells in a 5x7 grid tile the
// content box, rows 4..24 and columns 4..25; everything outside is exactly
// zero in every image, mirroring the dead margins of handwritten digit
// data. The right border is one pixel narrower than the left so the dead
// margins of adjacent image rows meet in runs of seven pixels, like the
// ragged frame of real digit scans.
const CELL_ROWS: usize = 4;
const CELL_COLS: usize = 5;
const ROW_LO: usize = 4;
const ROW_HI: usize = 24;
const COL_LO: usize = 4;
const COL_HI: usize = 25;
const STROKE_SIGMA: f64 = 1.10;
const STAMP_CUTOFF_SIGMA: f64 = 2.0;
const CONTROL_MARGIN: f64 = 0.5;
const DICTIONARY_SEED: u64 = 0x7D1C;
const INTENSITY_LO: f64 = 0.50;
const INTENSITY_HI: f64 = 0.90;

/// The fixed stroke dictionary: one quadratic Bezier per grid cell, drawn
/// with a fat Gaussian pen, peak intensity 1. Control points stay inside
/// their cell and the pen is clipped to the cell too, so every pixel
/// belongs to exactly one stroke and every image is an exact linear
/// combination of the strokes. Pixels outside the content box stay
/// exactly zero.
fn stroke_dictionary() -> Vec<Vec<f64>> {
    let mut rng = rng::for_stream(DICTIONARY_SEED, stream::DATA);
    let cell_h = (ROW_HI - ROW_LO) as f64 / CELL_ROWS as f64;
    let cell_w = (COL_HI - COL_LO) as f64 / CELL_COLS as f64;
    let mut dict = Vec::with_capacity(CELL_ROWS * CELL_COLS);
    for cell_r in 0..CELL_ROWS {
        for cell_c in 0..CELL_COLS {
            let top = ROW_LO as f64 + cell_h * cell_r as f64;
            let left = COL_LO as f64 + cell_w * cell_c as f64;
            let pts: Vec<(f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(left + CONTROL_MARGIN..left + cell_w - CONTROL_MARGIN),
                        rng.random_range(top + CONTROL_MARGIN..top + cell_h - CONTROL_MARGIN),
                    )
                })
                .collect();
            let mut img = vec![0.0f64; IMAGE_DIM];
            stamp_bezier(&mut img, &pts, STROKE_SIGMA, 1.0);
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let inside = r as f64 >= top
                        && (r as f64) < top + cell_h
                        && c as f64 >= left
                        && (c as f64) < left + cell_w;
                    if !inside {
                        img[r * IMAGE_SIDE + c] = 0.0;
                    }
                }
            }
            dict.push(img);
        }
    }
    for p in 0..IMAGE_DIM {
        let total: f64 = dict.iter().map(|img| img[p]).sum();
        if total * INTENSITY_HI > 1.0 {
            for img in dict.iter_mut() {
                img[p] /= total * INTENSITY_HI;
            }
        }
    }
    dict
}

/// Deterministic 28x28 images: every sample mixes the fixed stroke
/// dictionary with independent random intensities, then quantizes to 256
/// gray levels. The corpus is a low-dimensional manifold (one intensity
/// per stroke) that the autoencoders in this crate can learn to small
/// reconstruction error, while the pixel statistics (centered ink, hard
/// zero margins, faint stroke fringes) match what digit data looks like
/// to a pruner.
pub fn synthetic_images(seed: u64, count: usize) -> Dataset {
    let dict = stroke_dictionary();
    let mut rng = rng::for_stream(seed, stream::DATA);
    let mut data = vec![0.0f64; count * IMAGE_DIM];
    for img in data.chunks_exact_mut(IMAGE_DIM) {
        for base in &dict {
            let c: f64 = rng.random_range(INTENSITY_LO..INTENSITY_HI);
            for (p, &v) in img.iter_mut().zip(base) {
                *p += c * v;
            }
        }
        for v in img.iter_mut() {
            *v = (*v * 255.0).round() / 255.0;
        }
    }
    Dataset::new(Matrix::from_vec(count, IMAGE_DIM, data).expect("sized above"))
}

fn stamp_bezier(img: &mut [f64], pts: &[(f64, f64)], sigma: f64, intensity: f64) {
    let steps = 64;
    let radius = STAMP_CUTOFF_SIGMA * sigma;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let u = 1.0 - t;
        let x = u * u * pts[0].0 + 2.0 * u * t * pts[1].0 + t * t * pts[2].0;
        let y = u * u * pts[0].1 + 2.0 * u * t * pts[1].1 + t * t * pts[2].1;
        let r_lo = ((y - radius).floor().max(0.0)) as usize;
        let r_hi = ((y + radius).ceil().min(IMAGE_SIDE as f64 - 1.0)) as usize;
        let c_lo = ((x - radius).floor().max(0.0)) as usize;
        let c_hi = ((x + radius).ceil().min(IMAGE_SIDE as f64 - 1.0)) as usize;
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let dy = r as f64 - y;
                let dx = c as f64 - x;
                let d2 = dx * dx + dy * dy;
                if d2 > radius * radius {
                    continue;
                }
                let v = intensity * (-d2 / (2.0 * sigma * sigma)).exp();
                let cell = &mut img[r * IMAGE_SIDE + c];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}
