//! Information-loss estimation.
//!
//! Dropout is treated as noise injected into a layer's signal; the loss it
//! causes is measured either as the relative drop in mutual information
//! against a reference signal, or as `1 - SSIM` between the pre- and
//! post-dropout maps. All estimators are pure functions.

mod mi;
mod ssim;

pub use mi::{entropy_equal_bins, entropy_histogram, mi_pairwise_histogram, MIN_SAMPLES};
pub use ssim::{fitting_window, most_square_shape, ssim, ssim_vectors, DEFAULT_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinningMode {
    /// Fixed-width bins over the value range.
    FixedBins(usize),
    /// Equal-mass bins with edges at sample quantiles, capped at this count.
    EntropyEqualBins(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Min-max map each variable to [0, 1] before binning.
    PerUnitMinMax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MIEstimatorConfig {
    pub mode: BinningMode,
    pub normalization: Normalization,
}

impl MIEstimatorConfig {
    pub fn fixed(bins: usize) -> Self {
        MIEstimatorConfig {
            mode: BinningMode::FixedBins(bins),
            normalization: Normalization::PerUnitMinMax,
        }
    }

    pub fn adaptive(max_bins: usize) -> Self {
        MIEstimatorConfig {
            mode: BinningMode::EntropyEqualBins(max_bins),
            normalization: Normalization::PerUnitMinMax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bins = match self.mode {
            BinningMode::FixedBins(b) | BinningMode::EntropyEqualBins(b) => b,
        };
        if bins < 2 {
            return Err(Error::config("bin count must be >= 2"));
        }
        Ok(())
    }
}

impl Default for MIEstimatorConfig {
    fn default() -> Self {
        MIEstimatorConfig::fixed(DEFAULT_BINS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Mi(MIEstimatorConfig),
    Ssim,
}

/// Which signal anchors the loss measurement at a dropout site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    /// The clean no-dropout activation at the site: information originating
    /// at the network input, propagated without any dropout noise. Computed
    /// once per site.
    NetworkInput,
    /// The site's own current input (which may already carry noise from
    /// earlier, finalized sites).
    LayerInput,
}

/// Loss functional configuration: estimator, reference, target threshold
/// epsilon, and convergence tolerance delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoLossSpec {
    pub estimator: Estimator,
    pub reference: Reference,
    pub epsilon: f64,
    pub delta: f64,
}

impl InfoLossSpec {
    pub fn new(estimator: Estimator, reference: Reference, epsilon: f64, delta: f64) -> Result<Self> {
        let spec = InfoLossSpec {
            estimator,
            reference,
            epsilon,
            delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default configuration: fixed-bin MI against the network-input
    /// reference, with tolerance 0.01.
    pub fn mi_default(epsilon: f64) -> Result<Self> {
        InfoLossSpec::new(
            Estimator::Mi(MIEstimatorConfig::default()),
            Reference::NetworkInput,
            epsilon,
            0.01,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon must lie in [0, 1)"));
        }
        if self.delta <= 0.0 {
            return Err(Error::config("delta must be positive"));
        }
        if self.epsilon + self.delta >= 1.0 {
            return Err(Error::config("epsilon + delta must stay below 1"));
        }
        if let Estimator::Mi(cfg) = self.estimator {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// One information-loss measurement. In MI mode
/// `delta_i = (i_full - i_drop) / i_full`, so loss is positive when dropout
/// destroys information and directly comparable to epsilon. In SSIM mode
/// `i_full = 1` and `delta_i = 1 - ssim(pre, post)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeasurement {
    pub i_full: f64,
    pub i_drop: f64,
    pub delta_i: f64,
}

/// Measure the information loss a dropout application caused at one site.
///
/// `reference`, `pre_dropout`, and `post_dropout` are the per-unit signals
/// at the site; the units form the sample population for the MI histogram.
/// MI mode requires `i_full > 0`, otherwise the relative loss is undefined
/// and the caller must handle [`Error::UndefinedReference`].
pub fn measure_loss(
    spec: &InfoLossSpec,
    reference: &[f64],
    pre_dropout: &[f64],
    post_dropout: &[f64],
) -> Result<LossMeasurement> {
    if pre_dropout.len() != post_dropout.len() {
        return Err(Error::ShapeMismatch {
            context: "loss measurement pre/post",
            expected: pre_dropout.len(),
            got: post_dropout.len(),
        });
    }
    match spec.estimator {
        Estimator::Mi(cfg) => {
            if reference.len() != pre_dropout.len() {
                return Err(Error::ShapeMismatch {
                    context: "loss measurement reference",
                    expected: pre_dropout.len(),
                    got: reference.len(),
                });
            }
            let i_full = mi_pairwise_histogram(reference, pre_dropout, &cfg)?;
            if i_full <= 0.0 {
                return Err(Error::UndefinedReference);
            }
            let i_drop = mi_pairwise_histogram(reference, post_dropout, &cfg)?;
            Ok(LossMeasurement {
                i_full,
                i_drop,
                delta_i: (i_full - i_drop) / i_full,
            })
        }
        Estimator::Ssim => {
            let s = ssim_vectors(pre_dropout, post_dropout)?;
            Ok(LossMeasurement {
                i_full: 1.0,
                i_drop: s,
                delta_i: 1.0 - s,
            })
        }
    }
}

/// Batch-level MI between input features and a layer's activations: for
/// each (input component, hidden unit) pair, MI over the batch dimension,
/// averaged. With scalar inputs this is the mean per-unit MI against the
/// input.
pub fn mi_input_to_layer(
    input_batch: &[Vec<f64>],
    layer_activations: &[Vec<f64>],
    cfg: &MIEstimatorConfig,
) -> Result<f64> {
    if input_batch.len() != layer_activations.len() {
        return Err(Error::ShapeMismatch {
            context: "batch MI",
            expected: input_batch.len(),
            got: layer_activations.len(),
        });
    }
    if input_batch.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_SAMPLES,
            got: input_batch.len(),
        });
    }
    let d_in = input_batch[0].len();
    let d_act = layer_activations[0].len();
    if d_in == 0 || d_act == 0 {
        return Err(Error::config("batch MI needs non-empty feature vectors"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for k in 0..d_in {
        let xk: Vec<f64> = input_batch.iter().map(|v| v[k]).collect();
        for j in 0..d_act {
            let uj: Vec<f64> = layer_activations.iter().map(|v| v[j]).collect();
            total += mi_pairwise_histogram(&xk, &uj, cfg)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
