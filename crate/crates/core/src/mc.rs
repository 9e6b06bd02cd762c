//! Monte Carlo dropout harness: `T` stochastic passes under a policy,
//! predictive aggregation, and interval construction.
//!
//! Pass `t` draws its rates from `policy.rate_at(site, t)` and a mask seed
//! derived from `(seed, t)`, so summaries are fully replayable. The
//! per-output standard deviation uses the population convention
//! (divide by `T`); Welford accumulation keeps it exactly zero when every
//! pass is identical.

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::policies::DropoutPolicy;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    /// Elementwise mean prediction over the passes.
    pub mean: Vec<f64>,
    /// Population standard deviation per output element.
    pub std: Vec<f64>,
    /// `mean - z * std`.
    pub lower: Vec<f64>,
    /// `mean + z * std`.
    pub upper: Vec<f64>,
    /// Raw pass outputs, retained for diagnostics.
    pub passes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McClassification {
    /// Softmax probabilities averaged over passes.
    pub probs: Vec<f64>,
    /// `1 - max`-class mean probability.
    pub uncertainty: f64,
    /// Argmax class of the averaged probabilities.
    pub predicted: usize,
}

/// Run `t_passes` stochastic forward passes and summarize them.
pub fn mc_run(
    net: &Network,
    x: &[f64],
    policy: &DropoutPolicy,
    t_passes: usize,
    z: f64,
    seed_value: u64,
) -> Result<McSummary> {
    if t_passes < 2 {
        return Err(Error::config("MC summary needs T >= 2 for a std estimate"));
    }
    if z <= 0.0 {
        return Err(Error::config("interval z must be positive"));
    }
    let dim = net.output_dim();
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut passes = Vec::with_capacity(t_passes);
    for t in 1..=t_passes {
        let rates = policy.rates_for(net, t)?;
        let (out, _) = net.forward(x, &rates, seed::mix(seed_value, t as u64))?;
        for i in 0..dim {
            let d = out[i] - mean[i];
            mean[i] += d / t as f64;
            m2[i] += d * (out[i] - mean[i]);
        }
        passes.push(out);
    }
    let std: Vec<f64> = m2.iter().map(|&s| (s / t_passes as f64).sqrt()).collect();
    let lower: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - z * s).collect();
    let upper: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + z * s).collect();
    Ok(McSummary {
        mean,
        std,
        lower,
        upper,
        passes,
    })
}

/// Classification variant: average the per-pass softmax outputs; the
/// uncertainty score is one minus the top-class mean probability.
pub fn mc_classify(
    net: &Network,
    x: &[f64],
    policy: &DropoutPolicy,
    t_passes: usize,
    seed_value: u64,
) -> Result<McClassification> {
    if t_passes == 0 {
        return Err(Error::config("MC classification needs T >= 1"));
    }
    let dim = net.output_dim();
    let mut mean = vec![0.0; dim];
    for t in 1..=t_passes {
        let rates = policy.rates_for(net, t)?;
        let (logits, _) = net.forward(x, &rates, seed::mix(seed_value, t as u64))?;
        let probs = softmax(&logits);
        for i in 0..dim {
            mean[i] += (probs[i] - mean[i]) / t as f64;
        }
    }
    let (predicted, &p_max) = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty output");
    Ok(McClassification {
        probs: mean,
        uncertainty: 1.0 - p_max,
        predicted,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
