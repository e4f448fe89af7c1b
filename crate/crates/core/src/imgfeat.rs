//! Image-based quality features: resolution, perceived luminosity and
//! blurriness (variance of the Laplacian).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PixelBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image {width}x{height} is too small for a 3x3 Laplacian")]
    TooSmall { width: u32, height: u32 },
}

/// Channel weights of the perceived-brightness formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LuminosityWeights {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Default for LuminosityWeights {
    fn default() -> Self {
        LuminosityWeights {
            r: 0.299,
            g: 0.587,
            b: 0.114,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LaplacianKernel {
    /// `[[0,1,0],[1,-4,1],[0,1,0]]`
    #[default]
    #[serde(rename = "4n")]
    FourNeighbor,
    /// `[[1,1,1],[1,-8,1],[1,1,1]]`
    #[serde(rename = "8n")]
    EightNeighbor,
}

impl LaplacianKernel {
    pub fn weights(self) -> [[f64; 3]; 3] {
        match self {
            LaplacianKernel::FourNeighbor => [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
            LaplacianKernel::EightNeighbor => [[1.0, 1.0, 1.0], [1.0, -8.0, 1.0], [1.0, 1.0, 1.0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LaplacianKernel::FourNeighbor => "4n",
            LaplacianKernel::EightNeighbor => "8n",
        }
    }
}

impl std::str::FromStr for LaplacianKernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4n" => Ok(LaplacianKernel::FourNeighbor),
            "8n" => Ok(LaplacianKernel::EightNeighbor),
            other => Err(format!("unknown kernel {other:?} (expected 4n or 8n)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageFeatureConfig {
    pub weights: LuminosityWeights,
    pub kernel: LaplacianKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    /// Pixel count, width times height.
    pub resolution: f64,
    /// Mean perceived brightness in `[0, 255]`.
    pub luminosity: f64,
    /// Population variance of the Laplacian response over the valid region.
    pub blurriness: f64,
}

impl ImageFeatures {
    pub fn compute(img: &PixelBuffer, config: &ImageFeatureConfig) -> Result<Self, ImageError> {
        Ok(ImageFeatures {
            resolution: resolution(img) as f64,
            luminosity: luminosity(img, &config.weights),
            blurriness: blurriness(img, config.kernel)?,
        })
    }
}

pub fn resolution(img: &PixelBuffer) -> u64 {
    img.width() as u64 * img.height() as u64
}

/// Mean over pixels of `sqrt(wR*R^2 + wG*G^2 + wB*B^2)`.
pub fn luminosity(img: &PixelBuffer, w: &LuminosityWeights) -> f64 {
    let sum: f64 = img
        .pixels()
        .map(|[r, g, b]| {
            let (r, g, b) = (r as f64, g as f64, b as f64);
            (w.r * r * r + w.g * g * g + w.b * b * b).sqrt()
        })
        .sum();
    let n = img.width() as f64 * img.height() as f64;
    // Weights summing slightly above one could push a white image past 255.
    (sum / n).clamp(0.0, 255.0)
}

/// Single-channel real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "plane size mismatch");
        GrayPlane {
            width,
            height,
            values,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        GrayPlane::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayPlane {
        GrayPlane::new(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    /// 3x3 mean filter with edge replication; output has the same size.
    pub fn box_blur3(&self) -> GrayPlane {
        let (w, h) = (self.width as isize, self.height as isize);
        GrayPlane::from_fn(self.width, self.height, |x, y| {
            let mut acc = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                    acc += self.at(sx, sy);
                }
            }
            acc / 9.0
        })
    }
}

/// Luma `0.299R + 0.587G + 0.114B` per pixel, kept unquantized.
pub fn grayscale(img: &PixelBuffer) -> GrayPlane {
    GrayPlane::new(
        img.width() as usize,
        img.height() as usize,
        img.pixels()
            .map(|[r, g, b]| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect(),
    )
}

/// Laplacian responses over the valid region (no padding), row-major.
pub fn laplacian_response(
    plane: &GrayPlane,
    kernel: LaplacianKernel,
) -> Result<Vec<f64>, ImageError> {
    let (w, h) = (plane.width, plane.height);
    if w < 3 || h < 3 {
        return Err(ImageError::TooSmall {
            width: w as u32,
            height: h as u32,
        });
    }
    let k = kernel.weights();
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (ky, row) in k.iter().enumerate() {
                for (kx, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        acc += kv * plane.at(x + kx - 1, y + ky - 1);
                    }
                }
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Population variance of the Laplacian response of a grayscale plane.
pub fn laplacian_variance(plane: &GrayPlane, kernel: LaplacianKernel) -> Result<f64, ImageError> {
    let response = laplacian_response(plane, kernel)?;
    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let var = response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var)
}

pub fn blurriness(img: &PixelBuffer, kernel: LaplacianKernel) -> Result<f64, ImageError> {
    laplacian_variance(&grayscale(img), kernel)
}
