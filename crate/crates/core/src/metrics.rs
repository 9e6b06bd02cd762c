//! Evaluation metrics: predictive performance (MSE, ACC, DSC) and
//! uncertainty quality (ECE, AUARC, BUC, PICP / interval width / IER).
//!
//! All metrics are pure and permutation-invariant over their instances.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mc::McSummary;

/// Mean squared error.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths("mse", y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(Error::UndefinedMetric("mse of empty input"));
    }
    let n = y_true.len() as f64;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / n)
}

/// Fraction of equal labels.
pub fn acc(labels_true: &[usize], labels_pred: &[usize]) -> Result<f64> {
    check_lengths("acc", labels_true.len(), labels_pred.len())?;
    if labels_true.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of empty input"));
    }
    let correct = labels_true
        .iter()
        .zip(labels_pred)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / labels_true.len() as f64)
}

/// Dice similarity coefficient `2|P n G| / (|P| + |G|)`. Two empty masks
/// agree perfectly and score 1.
pub fn dsc(mask_pred: &Grid<bool>, mask_true: &Grid<bool>) -> Result<f64> {
    if !mask_pred.same_shape(mask_true) {
        return Err(Error::ShapeMismatch {
            context: "dsc masks",
            expected: mask_true.len(),
            got: mask_pred.len(),
        });
    }
    let inter = mask_pred
        .data()
        .iter()
        .zip(mask_true.data())
        .filter(|(p, g)| **p && **g)
        .count();
    let total = mask_pred.count_true() + mask_true.count_true();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Per-bin calibration statistics over uniform uncertainty bins on [0, 1].
#[derive(Debug, Clone)]
pub struct CalibrationBins {
    pub bin_count: usize,
    /// Per bin: (count, mean uncertainty, mean error). Empty bins are zeros.
    pub bins: Vec<(usize, f64, f64)>,
}

pub const DEFAULT_ECE_BINS: usize = 15;

/// Bin uncertainty scores uniformly on [0, 1]; the last bin is closed.
pub fn calibration_bins(
    uncertainty: &[f64],
    errors: &[bool],
    bin_count: usize,
) -> Result<CalibrationBins> {
    check_lengths("ece", uncertainty.len(), errors.len())?;
    if uncertainty.is_empty() {
        return Err(Error::UndefinedMetric("calibration of empty input"));
    }
    if bin_count == 0 {
        return Err(Error::config("ECE needs at least one bin"));
    }
    for &u in uncertainty {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("uncertainty {u} outside [0, 1]")));
        }
    }
    let mut count = vec![0usize; bin_count];
    let mut u_sum = vec![0.0; bin_count];
    let mut e_sum = vec![0.0; bin_count];
    for (&u, &e) in uncertainty.iter().zip(errors) {
        let m = ((u * bin_count as f64) as usize).min(bin_count - 1);
        count[m] += 1;
        u_sum[m] += u;
        e_sum[m] += f64::from(u8::from(e));
    }
    let bins = (0..bin_count)
        .map(|m| {
            if count[m] == 0 {
                (0, 0.0, 0.0)
            } else {
                let c = count[m] as f64;
                (count[m], u_sum[m] / c, e_sum[m] / c)
            }
        })
        .collect();
    Ok(CalibrationBins { bin_count, bins })
}

/// Expected calibration error: binned L1 gap between mean uncertainty and
/// mean binary error.
pub fn ece(uncertainty: &[f64], errors: &[bool], bin_count: usize) -> Result<f64> {
    let cal = calibration_bins(uncertainty, errors, bin_count)?;
    let n = uncertainty.len() as f64;
    Ok(cal
        .bins
        .iter()
        .map(|&(c, u, e)| (c as f64 / n) * (u - e).abs())
        .sum())
}

/// Area under the accuracy-rejection curve. The `r`-fraction most-uncertain
/// instances are rejected at each percentile threshold; accuracy of the
/// retained set is integrated over `r` in [0, 1] with the trapezoid rule.
/// At `r -> 1` the retained set is the single most-certain instance
/// (uncertainty ties break by instance index).
pub fn auarc(correct: &[bool], uncertainty: &[f64]) -> Result<f64> {
    check_lengths("auarc", correct.len(), uncertainty.len())?;
    let n = correct.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("AUARC needs at least 2 instances"));
    }
    // Most certain first; ties keep the original index order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    // prefix_correct[k] = correct count among the k most certain.
    let mut prefix = vec![0usize; n + 1];
    for (k, &i) in order.iter().enumerate() {
        prefix[k + 1] = prefix[k] + usize::from(correct[i]);
    }
    // Curve points at r = k/n for k = 0..n-1, plus the r = 1 endpoint.
    let acc_at = |rejected: usize| prefix[n - rejected] as f64 / (n - rejected) as f64;
    let mut area = 0.0;
    for k in 0..n - 1 {
        area += (acc_at(k) + acc_at(k + 1)) / 2.0 / n as f64;
    }
    // Last segment from (n-1)/n to 1 holds the singleton accuracy.
    area += acc_at(n - 1) / n as f64;
    Ok(area)
}

/// Boundary band and interior of a segmentation mask. The band contains all
/// pixels within Chebyshev radius `floor(w/2)` of a mask edge pixel (a
/// foreground pixel with a background 8-neighbor, image border counting as
/// background), so a width-`w` band straddles the contour. The interior is
/// the rest of the foreground.
#[derive(Debug, Clone)]
pub struct BoundaryMask {
    pub band: Grid<bool>,
    pub interior: Grid<bool>,
}

pub const DEFAULT_BAND_WIDTH: usize = 5;

pub fn boundary_mask(mask: &Grid<bool>, band_width: usize) -> Result<BoundaryMask> {
    if band_width == 0 {
        return Err(Error::config("band width must be >= 1"));
    }
    let rows = mask.rows();
    let cols = mask.cols();
    let mut edge = Grid::filled(rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            if !*mask.get(r, c) {
                continue;
            }
            let mut is_edge = false;
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        is_edge = true;
                        break 'scan;
                    }
                    if !*mask.get(rr as usize, cc as usize) {
                        is_edge = true;
                        break 'scan;
                    }
                }
            }
            if is_edge {
                edge.set(r, c, true);
            }
        }
    }
    let radius = (band_width / 2) as i64;
    let mut band = Grid::filled(rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            if !*edge.get(r, c) {
                continue;
            }
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr >= 0 && cc >= 0 && rr < rows as i64 && cc < cols as i64 {
                        band.set(rr as usize, cc as usize, true);
                    }
                }
            }
        }
    }
    let mut interior = Grid::filled(rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            if *mask.get(r, c) && !*band.get(r, c) {
                interior.set(r, c, true);
            }
        }
    }
    Ok(BoundaryMask { band, interior })
}

/// Boundary uncertainty consistency:
/// `mean(band) / (mean(band) + mean(interior))`.
pub fn buc(uncertainty_map: &Grid<f64>, mask_true: &Grid<bool>, band_width: usize) -> Result<f64> {
    if !uncertainty_map.same_shape(mask_true) {
        return Err(Error::ShapeMismatch {
            context: "buc grids",
            expected: mask_true.len(),
            got: uncertainty_map.len(),
        });
    }
    let bm = boundary_mask(mask_true, band_width)?;
    let mean_over = |region: &Grid<bool>| -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (u, &m) in uncertainty_map.data().iter().zip(region.data()) {
            if m {
                sum += u;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    };
    let mb = mean_over(&bm.band).ok_or(Error::UndefinedMetric("empty boundary band"))?;
    let mi = mean_over(&bm.interior).ok_or(Error::UndefinedMetric("empty mask interior"))?;
    if mb + mi == 0.0 {
        return Err(Error::UndefinedMetric("uncertainty vanishes on both regions"));
    }
    Ok(mb / (mb + mi))
}

/// Interval coverage and efficiency for scalar regression summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMetrics {
    /// Fraction of targets inside `[mean - z std, mean + z std]`.
    pub picp: f64,
    /// Mean interval width `2 z std`.
    pub mean_width: f64,
    /// `mean_width / picp`; +inf when nothing is covered.
    pub ier: f64,
}

pub fn picp_and_width(y_true: &[f64], summaries: &[McSummary], z: f64) -> Result<IntervalMetrics> {
    check_lengths("interval metrics", y_true.len(), summaries.len())?;
    if y_true.is_empty() {
        return Err(Error::UndefinedMetric("interval metrics of empty input"));
    }
    if z <= 0.0 {
        return Err(Error::config("interval z must be positive"));
    }
    let n = y_true.len() as f64;
    let mut covered = 0usize;
    let mut width_sum = 0.0;
    for (&y, s) in y_true.iter().zip(summaries) {
        let mu = s.mean[0];
        let sd = s.std[0];
        if (y - mu).abs() <= z * sd {
            covered += 1;
        }
        width_sum += 2.0 * z * sd;
    }
    let picp = covered as f64 / n;
    let mean_width = width_sum / n;
    let ier = if picp == 0.0 {
        f64::INFINITY
    } else {
        mean_width / picp
    };
    Ok(IntervalMetrics {
        picp,
        mean_width,
        ier,
    })
}

fn check_lengths(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: a,
            got: b,
        });
    }
    Ok(())
}
