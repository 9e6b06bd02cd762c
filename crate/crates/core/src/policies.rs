//! Inference-time dropout-rate policies.
//!
//! A policy assigns a rate to every `(site, MC iteration)` pair. Policies
//! are immutable after construction and `rate_at` is pure.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{Network, RateMap};
use crate::ratein::RateInReport;

#[derive(Debug, Clone, PartialEq)]
pub enum DropoutPolicy {
    /// Same rate at every site and iteration.
    Constant { p: f64 },
    /// Linear anneal from `p` at t = 1 to exactly 0 at t = T.
    Scheduled { p: f64, total_iterations: usize },
    /// Per-site rates scaled by activation coefficient of variation.
    Activation { rates: BTreeMap<String, f64> },
    /// Per-site rates taken from a rate adaptation report.
    FromRateIn { rates: BTreeMap<String, f64> },
}

impl DropoutPolicy {
    pub fn constant(p: f64) -> Result<Self> {
        check_rate(p)?;
        Ok(DropoutPolicy::Constant { p })
    }

    pub fn scheduled(p: f64, total_iterations: usize) -> Result<Self> {
        check_rate(p)?;
        if total_iterations == 0 {
            return Err(Error::config("scheduled policy needs T >= 1"));
        }
        Ok(DropoutPolicy::Scheduled {
            p,
            total_iterations,
        })
    }

    /// Adapter from an adaptation report: failed sites carry the rate the
    /// loop settled on (zero for undefined-reference failures).
    pub fn from_rate_in(report: &RateInReport) -> Result<Self> {
        let mut rates = BTreeMap::new();
        for site in &report.sites {
            check_rate(site.final_rate)?;
            rates.insert(site.site_id.clone(), site.final_rate);
        }
        if rates.is_empty() {
            return Err(Error::config("report has no sites"));
        }
        Ok(DropoutPolicy::FromRateIn { rates })
    }

    /// Rate for `site_id` at MC iteration `t` (1-based).
    pub fn rate_at(&self, site_id: &str, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain("MC iteration t starts at 1".into()));
        }
        match self {
            DropoutPolicy::Constant { p } => Ok(*p),
            DropoutPolicy::Scheduled {
                p,
                total_iterations,
            } => {
                let t_total = *total_iterations;
                if t > t_total {
                    return Err(Error::Domain(format!("iteration {t} exceeds T = {t_total}")));
                }
                if t_total == 1 {
                    // Degenerate single-pass schedule: the start rate.
                    return Ok(*p);
                }
                // Literal anneal shape: t = 1 yields exactly p, t = T exactly 0.
                Ok(p * (1.0 - (t - 1) as f64 / (t_total - 1) as f64))
            }
            DropoutPolicy::Activation { rates } | DropoutPolicy::FromRateIn { rates } => rates
                .get(site_id)
                .copied()
                .ok_or_else(|| Error::UnknownSite(site_id.to_string())),
        }
    }

    /// Full per-site rate map for iteration `t` over the network's sites.
    pub fn rates_for(&self, net: &Network, t: usize) -> Result<RateMap> {
        net.site_ids()
            .into_iter()
            .map(|id| self.rate_at(&id, t).map(|r| (id, r)))
            .collect()
    }
}

/// Build an activation-based policy: per-site coefficient of variation
/// (population std over mean absolute value) of the no-dropout feature maps,
/// pooled over all calibration inputs and units; the site with the largest
/// CoV receives exactly `p_max`. Returns the policy plus diagnostics for
/// degenerate sites.
pub fn activation_policy(
    net: &Network,
    calibration_inputs: &[Vec<f64>],
    p_max: f64,
) -> Result<(DropoutPolicy, Vec<String>)> {
    check_rate(p_max)?;
    if calibration_inputs.is_empty() {
        return Err(Error::config("activation policy needs calibration inputs"));
    }
    let site_ids = net.site_ids();
    if site_ids.is_empty() {
        return Err(Error::config("network has no dropout sites"));
    }

    let mut pooled: BTreeMap<String, Vec<f64>> = site_ids
        .iter()
        .map(|id| (id.clone(), Vec::new()))
        .collect();
    for x in calibration_inputs {
        let (_, traces) = net.forward_clean(x)?;
        for tr in traces {
            pooled
                .get_mut(&tr.site_id)
                .expect("trace site known")
                .extend(tr.pre);
        }
    }

    let mut diagnostics = Vec::new();
    let mut covs: BTreeMap<String, f64> = BTreeMap::new();
    for (id, values) in &pooled {
        let n = values.len() as f64;
        let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
        if mean_abs == 0.0 {
            diagnostics.push(format!("site `{id}`: all-zero activations, CoV set to 0"));
            covs.insert(id.clone(), 0.0);
            continue;
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        covs.insert(id.clone(), var.sqrt() / mean_abs);
    }

    let max_cov = covs.values().cloned().fold(0.0, f64::max);
    let rates: BTreeMap<String, f64> = if max_cov == 0.0 {
        diagnostics.push("all sites degenerate; every rate set to 0".to_string());
        covs.keys().map(|id| (id.clone(), 0.0)).collect()
    } else {
        covs.iter()
            .map(|(id, &cov)| (id.clone(), p_max * (cov / max_cov)))
            .collect()
    };
    Ok((DropoutPolicy::Activation { rates }, diagnostics))
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidRate(p));
    }
    Ok(())
}
