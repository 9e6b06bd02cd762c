//! Histogram mutual-information estimation.
//!
//! Two binning modes: fixed-width bins over the (optionally normalized)
//! value range, and equal-mass bins whose edges sit at sample quantiles.
//! MI is the plug-in estimate over the 2-D joint histogram, in nats,
//! clamped at zero against floating-point dust.

use super::{BinningMode, MIEstimatorConfig, Normalization};
use crate::error::{Error, Result};

/// Minimum sample count for any pairwise MI estimate.
pub const MIN_SAMPLES: usize = 4;

/// Equal-mass bin edges: at most `max_bins` bins, each holding
/// `floor(n/bins)` or `ceil(n/bins)` samples when values are distinct.
/// Ties across a boundary merge bins. Returns the interior edges
/// (`bins - 1` values for `bins` bins); a value `v` falls in the bin
/// indexed by the number of edges strictly below `v`... values equal to an
/// edge land in the left bin.
pub fn entropy_equal_bins(samples: &[f64], max_bins: usize) -> Result<Vec<f64>> {
    if max_bins == 0 {
        return Err(Error::config("bin count must be >= 1"));
    }
    if samples.len() < max_bins {
        return Err(Error::InsufficientSamples {
            required: max_bins,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(max_bins.saturating_sub(1));
    for k in 1..max_bins {
        let cut = k * n / max_bins;
        let lo = sorted[cut - 1];
        let hi = sorted[cut];
        if lo == hi {
            // Tied boundary: placing the edge here would split equal values;
            // merging is the documented behavior.
            continue;
        }
        let edge = lo + (hi - lo) / 2.0;
        if edges.last().is_none_or(|&prev| edge > prev) {
            edges.push(edge);
        }
    }
    Ok(edges)
}

/// Bin index under interior `edges`: values equal to an edge go left.
fn bin_by_edges(v: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e < v)
}

/// Pairwise MI between two equal-length sample vectors, in nats.
/// Symmetric in its arguments bit-for-bit and non-negative.
pub fn mi_pairwise_histogram(a: &[f64], b: &[f64], cfg: &MIEstimatorConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "pairwise MI",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_SAMPLES,
            got: a.len(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    cfg.validate()?;

    let ia = discretize(a, cfg)?;
    let ib = discretize(b, cfg)?;
    Ok(mi_from_indices(&ia.0, ia.1, &ib.0, ib.1, a.len()))
}

/// Discretize one variable into bin indices; returns (indices, bin_count).
fn discretize(v: &[f64], cfg: &MIEstimatorConfig) -> Result<(Vec<usize>, usize)> {
    let data = match cfg.normalization {
        Normalization::PerUnitMinMax => min_max_normalize(v),
        Normalization::None => v.to_vec(),
    };
    match cfg.mode {
        BinningMode::FixedBins(bins) => {
            let (lo, hi) = match cfg.normalization {
                Normalization::PerUnitMinMax => (0.0, 1.0),
                Normalization::None => range(&data),
            };
            if hi <= lo {
                // Constant variable: a single occupied bin, entropy zero.
                return Ok((vec![0; data.len()], 1));
            }
            let idx = data
                .iter()
                .map(|&x| {
                    let t = (x - lo) / (hi - lo);
                    ((t * bins as f64) as usize).min(bins - 1)
                })
                .collect();
            Ok((idx, bins))
        }
        BinningMode::EntropyEqualBins(max_bins) => {
            // Clamp the bin budget to the sample count so per-instance
            // signals with few units stay estimable.
            let bins = max_bins.min(data.len());
            let edges = entropy_equal_bins(&data, bins)?;
            let count = edges.len() + 1;
            let idx = data.iter().map(|&x| bin_by_edges(x, &edges)).collect();
            Ok((idx, count))
        }
    }
}

/// Plug-in MI from per-variable bin indices. Terms are summed in a
/// canonical order so `mi(a,b)` and `mi(b,a)` are equal to the last bit.
fn mi_from_indices(ia: &[usize], na: usize, ib: &[usize], nb: usize, n: usize) -> f64 {
    let mut joint = vec![0u64; na * nb];
    let mut ca = vec![0u64; na];
    let mut cb = vec![0u64; nb];
    for (&x, &y) in ia.iter().zip(ib) {
        joint[x * nb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let mut terms: Vec<f64> = Vec::new();
    for x in 0..na {
        for y in 0..nb {
            let c = joint[x * nb + y];
            if c > 0 {
                let p = c as f64 / nf;
                terms.push(p * ((c as f64 * nf) / (ca[x] as f64 * cb[y] as f64)).ln());
            }
        }
    }
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    mi.max(0.0)
}

/// Discrete entropy of one variable under the same discretization, in nats.
/// Upper-bounds any MI against this variable.
pub fn entropy_histogram(v: &[f64], cfg: &MIEstimatorConfig) -> Result<f64> {
    let (idx, bins) = discretize(v, cfg)?;
    let mut counts = vec![0u64; bins];
    for &i in &idx {
        counts[i] += 1;
    }
    let n = v.len() as f64;
    let mut terms: Vec<f64> = counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = range(v);
    if hi <= lo {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
