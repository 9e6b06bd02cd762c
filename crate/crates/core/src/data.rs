//! Synthetic dataset generators.
//!
//! All generators are pure functions of their parameters including the seed;
//! the generator is ChaCha8 seeded through [`crate::seed::mix`], so fixtures
//! are identical across platforms. The default seed for the bundled
//! experiment drivers is 123.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::seed;

pub const DEFAULT_SEED: u64 = 123;

/// 1-D regression sample: `x` uniform on [-3, 3], `y = sin(x) + noise`.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl RegressionDataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Inputs as one-element feature vectors, the layout the network expects.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.xs.iter().map(|&x| vec![x]).collect()
    }

    /// Write as a two-column CSV (`x,y`) for cross-implementation fixtures.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "x,y")?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            writeln!(f, "{x},{y}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let mut parts = line.split(',');
            let x = parts
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::RecordFormat(format!("bad x on line {}", i + 1)))?;
            let y = parts
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::RecordFormat(format!("bad y on line {}", i + 1)))?;
            xs.push(x);
            ys.push(y);
        }
        Ok(RegressionDataset {
            xs,
            ys,
            sigma: f64::NAN,
            seed: 0,
        })
    }
}

/// Generate `n` points of `y = sin(x) + eps`, `x ~ U[-3, 3]`, `eps ~ N(0, sigma^2)`.
pub fn gen_regression(n: usize, sigma: f64, seed: u64) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(Error::config("regression dataset size must be >= 1"));
    }
    if sigma < 0.0 {
        return Err(Error::config("noise level must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random::<f64>() * 6.0 - 3.0;
        let eps = if sigma > 0.0 {
            sigma * noise.sample(&mut rng)
        } else {
            // Keep the draw so sigma=0 datasets share x-streams with noisy ones.
            noise.sample(&mut rng) * 0.0
        };
        xs.push(x);
        ys.push(x.sin() + eps);
    }
    Ok(RegressionDataset {
        xs,
        ys,
        sigma,
        seed,
    })
}

/// Train/test pair with distinct derived seeds so the streams share no draws.
pub fn gen_regression_split(
    n_train: usize,
    n_test: usize,
    sigma: f64,
    seed: u64,
) -> Result<(RegressionDataset, RegressionDataset)> {
    let train = gen_regression(n_train, sigma, seed::mix(seed, 1))?;
    let test = gen_regression(n_test, sigma, seed::mix(seed, 2))?;
    Ok((train, test))
}

/// Isotropic Gaussian blob classification data.
#[derive(Debug, Clone)]
pub struct BlobsDataset {
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub centers: Vec<[f64; 2]>,
}

impl BlobsDataset {
    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    /// Bayes-rule accuracy on this sample: classify to the nearest center.
    pub fn nearest_center_accuracy(&self) -> f64 {
        let mut correct = 0usize;
        for (x, &label) in self.xs.iter().zip(&self.labels) {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, c) in self.centers.iter().enumerate() {
                let d = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        correct as f64 / self.xs.len() as f64
    }
}

/// 2-D isotropic unit-variance Gaussian clusters with centers spaced so that
/// adjacent centers sit `separation` apart; labels are balanced within one.
pub fn gen_blobs(n: usize, classes: usize, separation: f64, seed: u64) -> Result<BlobsDataset> {
    if classes < 2 {
        return Err(Error::config("blob generation needs >= 2 classes"));
    }
    if n == 0 {
        return Err(Error::config("blob dataset size must be >= 1"));
    }
    let radius = if classes == 2 {
        separation / 2.0
    } else {
        separation / (2.0 * (std::f64::consts::PI / classes as f64).sin())
    };
    let centers: Vec<[f64; 2]> = (0..classes)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut xs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let c = centers[label];
        xs.push(vec![
            c[0] + unit.sample(&mut rng),
            c[1] + unit.sample(&mut rng),
        ]);
        labels.push(label);
    }
    Ok(BlobsDataset {
        xs,
        labels,
        centers,
    })
}

/// Synthetic segmentation sample: intensity image plus ground-truth mask.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub image: Grid<f64>,
    pub mask: Grid<bool>,
    /// Disk parameters when the shape is a disk: (center_row, center_col, radius).
    pub disk: Option<(f64, f64, f64)>,
}

impl ShapeSample {
    /// Flattened CSV export: one row per pixel (`row,col,intensity,mask`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "row,col,intensity,mask")?;
        for r in 0..self.image.rows() {
            for c in 0..self.image.cols() {
                let m = u8::from(*self.mask.get(r, c));
                writeln!(f, "{r},{c},{},{m}", self.image.get(r, c))?;
            }
        }
        Ok(())
    }
}

pub const DEFAULT_SHAPE_NOISE: f64 = 0.1;

/// Random disk or rectangle on a `grid_size` x `grid_size` canvas with the
/// default noise level.
pub fn gen_shapes(grid_size: usize, seed: u64) -> Result<ShapeSample> {
    gen_shapes_with_noise(grid_size, DEFAULT_SHAPE_NOISE, seed)
}

/// As [`gen_shapes`] with explicit additive Gaussian noise; `noise = 0`
/// yields an image whose thresholding recovers the mask exactly.
pub fn gen_shapes_with_noise(grid_size: usize, noise: f64, seed: u64) -> Result<ShapeSample> {
    if grid_size < 16 {
        return Err(Error::config("shape grid must be at least 16 pixels wide"));
    }
    if noise < 0.0 {
        return Err(Error::config("shape noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = grid_size as f64;
    let mut mask = Grid::filled(grid_size, grid_size, false);
    let disk = if rng.random::<f64>() < 0.5 {
        let radius = g * (0.15 + 0.15 * rng.random::<f64>());
        let cr = g / 2.0 + (rng.random::<f64>() - 0.5) * g * 0.2;
        let cc = g / 2.0 + (rng.random::<f64>() - 0.5) * g * 0.2;
        for r in 0..grid_size {
            for c in 0..grid_size {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                if dr * dr + dc * dc <= radius * radius {
                    mask.set(r, c, true);
                }
            }
        }
        Some((cr, cc, radius))
    } else {
        let h = (g * (0.2 + 0.3 * rng.random::<f64>())) as usize;
        let w = (g * (0.2 + 0.3 * rng.random::<f64>())) as usize;
        let r0 = rng.random_range(2..grid_size.saturating_sub(h + 2).max(3));
        let c0 = rng.random_range(2..grid_size.saturating_sub(w + 2).max(3));
        for r in r0..(r0 + h).min(grid_size) {
            for c in c0..(c0 + w).min(grid_size) {
                mask.set(r, c, true);
            }
        }
        None
    };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut image = Grid::filled(grid_size, grid_size, 0.0);
    for r in 0..grid_size {
        for c in 0..grid_size {
            let base = if *mask.get(r, c) { 1.0 } else { 0.0 };
            let eps = if noise > 0.0 {
                noise * unit.sample(&mut rng)
            } else {
                0.0
            };
            image.set(r, c, base + eps);
        }
    }
    Ok(ShapeSample { image, mask, disk })
}

/// Deterministic disk sample used by metric tests: fixed center and radius.
pub fn gen_disk(grid_size: usize, radius: f64, noise: f64, seed: u64) -> Result<ShapeSample> {
    if grid_size < 16 {
        return Err(Error::config("shape grid must be at least 16 pixels wide"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let cr = grid_size as f64 / 2.0;
    let cc = grid_size as f64 / 2.0;
    let mut mask = Grid::filled(grid_size, grid_size, false);
    let mut image = Grid::filled(grid_size, grid_size, 0.0);
    for r in 0..grid_size {
        for c in 0..grid_size {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            let inside = dr * dr + dc * dc <= radius * radius;
            mask.set(r, c, inside);
            let eps = if noise > 0.0 {
                noise * unit.sample(&mut rng)
            } else {
                0.0
            };
            image.set(r, c, f64::from(u8::from(inside)) + eps);
        }
    }
    Ok(ShapeSample {
        image,
        mask,
        disk: Some((cr, cc, radius)),
    })
}
