//! Structural similarity (SSIM) over 2-D maps.
//!
//! Gaussian-weighted local statistics (sigma 1.5) inside an odd square
//! window (default 11), stability constants `C1 = (0.01 * data_range)^2`
//! and `C2 = (0.03 * data_range)^2`, averaged over every valid window
//! position. `ssim(a, a)` is exactly 1.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_WINDOW: usize = 11;
pub const GAUSSIAN_SIGMA: f64 = 1.5;

pub fn ssim(a: &Grid<f64>, b: &Grid<f64>, window: usize, data_range: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "ssim maps",
            expected: a.len(),
            got: b.len(),
        });
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::config("ssim window must be odd and positive"));
    }
    if a.rows() < window || a.cols() < window {
        return Err(Error::config(format!(
            "ssim window {window} exceeds map {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if data_range <= 0.0 {
        return Err(Error::config("ssim data_range must be positive"));
    }

    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let weights = gaussian_window(window, GAUSSIAN_SIGMA);

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(a.rows() - window) {
        for c0 in 0..=(a.cols() - window) {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in 0..window {
                for dc in 0..window {
                    let w = weights[dr * window + dc];
                    let va = *a.get(r0 + dr, c0 + dc);
                    let vb = *b.get(r0 + dr, c0 + dc);
                    ma += w * va;
                    mb += w * vb;
                    maa += w * va * va;
                    mbb += w * vb * vb;
                    mab += w * va * vb;
                }
            }
            let var_a = maa - ma * ma;
            let var_b = mbb - mb * mb;
            let cov = mab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM between two dense activation vectors: both are normalized to [0, 1]
/// by their common value range, reshaped to the most-square 2-D grid the
/// length admits, and compared with `data_range = 1`. The window shrinks to
/// the largest odd size that fits the grid.
pub fn ssim_vectors(pre: &[f64], post: &[f64]) -> Result<f64> {
    if pre.len() != post.len() {
        return Err(Error::ShapeMismatch {
            context: "ssim vectors",
            expected: pre.len(),
            got: post.len(),
        });
    }
    if pre.is_empty() {
        return Err(Error::config("ssim needs non-empty vectors"));
    }
    let lo = pre
        .iter()
        .chain(post.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = pre
        .iter()
        .chain(post.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: &[f64]| -> Vec<f64> {
        if hi > lo {
            v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; v.len()]
        }
    };
    let (rows, cols) = most_square_shape(pre.len());
    let a = Grid::from_vec(rows, cols, norm(pre))?;
    let b = Grid::from_vec(rows, cols, norm(post))?;
    let window = fitting_window(rows.min(cols));
    ssim(&a, &b, window, 1.0)
}

/// Largest divisor pair (r, c) of `len` with r <= sqrt(len) <= c.
pub fn most_square_shape(len: usize) -> (usize, usize) {
    let mut r = (len as f64).sqrt() as usize;
    while r > 1 && !len.is_multiple_of(r) {
        r -= 1;
    }
    (r.max(1), len / r.max(1))
}

/// Largest odd window not exceeding `limit`, capped at the default 11.
pub fn fitting_window(limit: usize) -> usize {
    let w = DEFAULT_WINDOW.min(limit.max(1));
    if w.is_multiple_of(2) {
        w - 1
    } else {
        w
    }
}

fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut w = Vec::with_capacity(window * window);
    for r in -half..=half {
        for c in -half..=half {
            let d2 = (r * r + c * c) as f64;
            w.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, seed: u64) -> Grid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random()).collect();
        Grid::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_is_exactly_one() {
        let a = random_grid(16, 16, 1);
        let s = ssim(&a, &a, 11, 1.0).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = random_grid(14, 14, 2);
        let b = random_grid(14, 14, 3);
        let ab = ssim(&a, &b, 7, 1.0).unwrap();
        let ba = ssim(&b, &a, 7, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn constant_images_match_closed_form() {
        // a = 0, b = 1, data_range 1: all variances vanish, so
        // SSIM = (2*0*1 + C1)(0 + C2) / ((0 + 1 + C1)(0 + C2)) = C1 / (1 + C1).
        let a = Grid::filled(12, 12, 0.0);
        let b = Grid::filled(12, 12, 1.0);
        let c1 = (0.01f64).powi(2);
        let expected = c1 / (1.0 + c1);
        let s = ssim(&a, &b, 11, 1.0).unwrap();
        assert!((s - expected).abs() < 1e-9, "ssim {s} vs {expected}");
    }

    #[test]
    fn zeroing_fraction_degrades_monotonically() {
        let fractions = [0.05, 0.1, 0.2, 0.4];
        let mut means = Vec::new();
        for &f in &fractions {
            let mut acc = 0.0;
            for seed in 0..100u64 {
                let a = random_grid(12, 12, 1000 + seed);
                let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
                let data: Vec<f64> = a
                    .data()
                    .iter()
                    .map(|&v| if rng.random::<f64>() < f { 0.0 } else { v })
                    .collect();
                let b = Grid::from_vec(12, 12, data).unwrap();
                acc += ssim(&a, &b, 11, 1.0).unwrap();
            }
            means.push(acc / 100.0);
        }
        for w in means.windows(2) {
            assert!(w[1] < w[0], "means {means:?}");
        }
        assert!(means[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = random_grid(12, 12, 1);
        let b = random_grid(12, 13, 1);
        assert!(ssim(&a, &b, 11, 1.0).is_err());
    }

    #[test]
    fn window_larger_than_map_is_error() {
        let a = random_grid(8, 8, 1);
        assert!(ssim(&a, &a, 11, 1.0).is_err());
    }

    #[test]
    fn vector_path_reshapes_and_is_exact_on_identity() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = ssim_vectors(&v, &v).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn most_square_shapes() {
        assert_eq!(most_square_shape(50), (5, 10));
        assert_eq!(most_square_shape(49), (7, 7));
        assert_eq!(most_square_shape(13), (1, 13));
        assert_eq!(most_square_shape(1), (1, 1));
    }

    #[test]
    fn fitting_windows_are_odd() {
        assert_eq!(fitting_window(50), 11);
        assert_eq!(fitting_window(10), 9);
        assert_eq!(fitting_window(5), 5);
        assert_eq!(fitting_window(1), 1);
    }
}
