//! Per-instance, per-site dropout-rate adaptation.
//!
//! Sites are processed in forward order. While a site is being adjusted,
//! every earlier site keeps its finalized rate under a frozen mask and every
//! later site runs at rate zero, so the modified signal propagates forward
//! and inter-layer rate dependency is preserved. At each iteration the site
//! applies a fresh mask, the information loss `delta_i` is measured against
//! the configured reference signal, and the rate moves by
//! `p <- clamp(p - lr * (delta_i - epsilon))` until `|delta_i - epsilon|`
//! falls inside the tolerance band or the iteration budget runs out.
//!
//! The measurement anchor per reference mode:
//!
//! * `NetworkInput` (default): the clean no-dropout activation at the site,
//!   computed once per instance. Noise inherited from earlier finalized
//!   sites therefore counts toward the measured loss, which is what makes
//!   deeper sites occasionally unable to reach small targets even at rate
//!   zero; such sites are reported as `floor-reached` rather than hidden.
//! * `LayerInput`: the site's own current input, so each site targets only
//!   the loss it adds itself.
//!
//! Every mask seed derives from `(config seed, input hash, site, iteration,
//! sample)`, so reports are replayable bit-for-bit: re-measuring a converged
//! site with the reported rate and iteration count reproduces the recorded
//! `delta_i` exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{measure_loss, InfoLossSpec, Reference};
use crate::nn::{Network, RateMap};
use crate::seed;

/// Stream tag for a site's frozen post-adaptation mask.
const FINAL_TAG: u64 = u64::MAX;

pub const DEFAULT_N_MAX: usize = 30;
pub const DEFAULT_LR: f64 = 0.9;
pub const DEFAULT_P_MAX: f64 = 0.95;

/// Initial rate assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PInit {
    Uniform(f64),
    PerSite(BTreeMap<String, f64>),
}

impl PInit {
    fn rate_for(&self, site_id: &str) -> Result<f64> {
        match self {
            PInit::Uniform(p) => Ok(*p),
            PInit::PerSite(map) => map
                .get(site_id)
                .copied()
                .ok_or_else(|| Error::UnknownSite(site_id.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateInConfig {
    pub spec: InfoLossSpec,
    pub p_init: PInit,
    /// Iteration budget per site; each iteration is one loss measurement.
    pub n_max: usize,
    /// Step scale of the proportional update.
    pub lr: f64,
    /// Masks averaged per loss measurement.
    pub mask_samples: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Base seed; per-instance streams derive from it and the input hash.
    pub seed: u64,
    /// Optional per-site targets overriding `spec.epsilon`.
    pub epsilon_overrides: BTreeMap<String, f64>,
}

impl RateInConfig {
    pub fn new(spec: InfoLossSpec, p_init: f64, seed: u64) -> Result<Self> {
        let cfg = RateInConfig {
            spec,
            p_init: PInit::Uniform(p_init),
            n_max: DEFAULT_N_MAX,
            lr: DEFAULT_LR,
            mask_samples: 1,
            p_min: 0.0,
            p_max: DEFAULT_P_MAX,
            seed,
            epsilon_overrides: BTreeMap::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_max == 0 {
            return Err(Error::config("n_max must be >= 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("update step scale must be positive"));
        }
        if self.mask_samples == 0 {
            return Err(Error::config("mask_samples must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.p_min) || !(0.0..1.0).contains(&self.p_max) {
            return Err(Error::config("rate bounds must lie in [0, 1)"));
        }
        if self.p_min > self.p_max {
            return Err(Error::config("p_min must not exceed p_max"));
        }
        let check_init = |p: f64| -> Result<()> {
            if p < self.p_min || p > self.p_max {
                return Err(Error::config(format!(
                    "initial rate {p} outside bounds [{}, {}]",
                    self.p_min, self.p_max
                )));
            }
            Ok(())
        };
        match &self.p_init {
            PInit::Uniform(p) => check_init(*p)?,
            PInit::PerSite(map) => {
                for &p in map.values() {
                    check_init(p)?;
                }
            }
        }
        for &e in self.epsilon_overrides.values() {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::config("per-site epsilon must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    fn epsilon_for(&self, site_id: &str) -> f64 {
        self.epsilon_overrides
            .get(site_id)
            .copied()
            .unwrap_or(self.spec.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// Iteration budget exhausted before entering the tolerance band.
    HitNMax,
    /// Rate pinned at `p_min` with the loss still above `epsilon + delta`;
    /// the information inherited by this site already falls short of the
    /// target, so no rate can fix it.
    FloorReached,
    /// The reference signal carries no measurable information.
    UndefinedReference,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureReason::HitNMax => "hit-n-max",
            FailureReason::FloorReached => "floor-reached",
            FailureReason::UndefinedReference => "undefined-reference",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FailureReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hit-n-max" => Ok(FailureReason::HitNMax),
            "floor-reached" => Ok(FailureReason::FloorReached),
            "undefined-reference" => Ok(FailureReason::UndefinedReference),
            other => Err(Error::RecordFormat(format!("unknown failure reason `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site_id: String,
    pub final_rate: f64,
    pub final_delta_i: f64,
    /// Loss measurements spent on this site (1 means the initial rate was
    /// already inside the tolerance band).
    pub iterations_used: usize,
    pub converged: bool,
    pub failure_reason: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateInReport {
    pub sites: Vec<SiteReport>,
}

impl RateInReport {
    pub fn rates(&self) -> RateMap {
        self.sites
            .iter()
            .map(|s| (s.site_id.clone(), s.final_rate))
            .collect()
    }

    pub fn converged_count(&self) -> usize {
        self.sites.iter().filter(|s| s.converged).count()
    }
}

/// Per-site aggregate over a batch of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRateStats {
    pub site_id: String,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct BatchAdaptation {
    pub reports: Vec<RateInReport>,
    /// Present in population mode: per-site distribution of converged rates
    /// for offline reuse.
    pub population: Option<Vec<SiteRateStats>>,
}

struct InstanceContext<'a> {
    net: &'a Network,
    x: &'a [f64],
    cfg: &'a RateInConfig,
    instance_seed: u64,
    site_ids: Vec<String>,
    /// Clean no-dropout activation entering each site, in site order.
    clean: Vec<Vec<f64>>,
}

impl<'a> InstanceContext<'a> {
    fn build(net: &'a Network, x: &'a [f64], cfg: &'a RateInConfig) -> Result<Self> {
        let site_ids = net.site_ids();
        if site_ids.is_empty() {
            return Err(Error::config("network has no dropout sites"));
        }
        let instance_seed = seed::mix(cfg.seed, seed::hash_f64s(x));
        let (_, traces) = net.forward_clean(x)?;
        let clean = traces.into_iter().map(|t| t.pre).collect();
        Ok(InstanceContext {
            net,
            x,
            cfg,
            instance_seed,
            site_ids,
            clean,
        })
    }

    fn frozen_seed(&self, site_index: usize) -> u64 {
        seed::mix_many(self.instance_seed, &[site_index as u64, FINAL_TAG])
    }

    fn iter_seed(&self, site_index: usize, iteration: usize, sample: usize) -> u64 {
        seed::mix_many(
            self.instance_seed,
            &[site_index as u64, iteration as u64, sample as u64],
        )
    }

    /// One loss measurement for `site_index` at rate `p` and the given
    /// iteration: mean `delta_i` over `mask_samples` fresh masks, with
    /// earlier sites frozen at `finalized` rates and later sites off.
    fn measure(
        &self,
        finalized: &BTreeMap<String, f64>,
        site_index: usize,
        p: f64,
        iteration: usize,
    ) -> Result<f64> {
        let mut rates = RateMap::new();
        let mut site_seeds = BTreeMap::new();
        for (i, id) in self.site_ids.iter().enumerate() {
            let (rate, mask_seed) = match i.cmp(&site_index) {
                std::cmp::Ordering::Less => (finalized[id], self.frozen_seed(i)),
                std::cmp::Ordering::Equal => (p, 0), // per-sample seed set below
                std::cmp::Ordering::Greater => (0.0, self.frozen_seed(i)),
            };
            rates.insert(id.clone(), rate);
            site_seeds.insert(id.clone(), mask_seed);
        }
        let site_id = &self.site_ids[site_index];
        let mut total = 0.0;
        for k in 0..self.cfg.mask_samples {
            site_seeds.insert(site_id.clone(), self.iter_seed(site_index, iteration, k));
            let (_, traces) = self.net.forward_with_site_seeds(self.x, &rates, &site_seeds)?;
            let trace = &traces[site_index];
            let anchor = match self.cfg.spec.reference {
                Reference::NetworkInput => &self.clean[site_index],
                Reference::LayerInput => &trace.pre,
            };
            total += measure_loss(&self.cfg.spec, anchor, anchor, &trace.post)?.delta_i;
        }
        Ok(total / self.cfg.mask_samples as f64)
    }
}

/// Adapt every dropout site of `net` for one input instance.
pub fn adapt_rates(net: &Network, x: &[f64], cfg: &RateInConfig) -> Result<RateInReport> {
    cfg.validate()?;
    let ctx = InstanceContext::build(net, x, cfg)?;
    let mut finalized: BTreeMap<String, f64> = BTreeMap::new();
    let mut sites = Vec::with_capacity(ctx.site_ids.len());

    for (l, site_id) in ctx.site_ids.iter().enumerate() {
        let eps = cfg.epsilon_for(site_id);
        let delta = cfg.spec.delta;
        let mut p = cfg.p_init.rate_for(site_id)?.clamp(cfg.p_min, cfg.p_max);
        let mut report = SiteReport {
            site_id: site_id.clone(),
            final_rate: p,
            final_delta_i: f64::NAN,
            iterations_used: 0,
            converged: false,
            failure_reason: None,
        };

        'iterate: for n in 1..=cfg.n_max {
            report.iterations_used = n;
            let delta_i = match ctx.measure(&finalized, l, p, n) {
                Ok(v) => v,
                Err(Error::UndefinedReference) => {
                    p = 0.0_f64.max(cfg.p_min);
                    report.final_delta_i = f64::NAN;
                    report.failure_reason = Some(FailureReason::UndefinedReference);
                    break 'iterate;
                }
                Err(e) => return Err(e),
            };
            report.final_delta_i = delta_i;
            if (delta_i - eps).abs() < delta {
                report.converged = true;
                break 'iterate;
            }
            if n == cfg.n_max {
                report.failure_reason = Some(FailureReason::HitNMax);
                break 'iterate;
            }
            let next = (p - cfg.lr * (delta_i - eps)).clamp(cfg.p_min, cfg.p_max);
            if next == p && p == cfg.p_min && delta_i > eps + delta {
                report.failure_reason = Some(FailureReason::FloorReached);
                break 'iterate;
            }
            p = next;
        }

        report.final_rate = p;
        finalized.insert(site_id.clone(), p);
        sites.push(report);
    }
    Ok(RateInReport { sites })
}

/// Re-measure the loss a report recorded for one site, with the same rates
/// and mask seeds. Returns `None` for sites that failed with an undefined
/// reference. For all other sites the value equals `final_delta_i` exactly.
pub fn remeasure_site(
    net: &Network,
    x: &[f64],
    cfg: &RateInConfig,
    report: &RateInReport,
    site_index: usize,
) -> Result<Option<f64>> {
    let ctx = InstanceContext::build(net, x, cfg)?;
    let site = report
        .sites
        .get(site_index)
        .ok_or_else(|| Error::config(format!("report has no site {site_index}")))?;
    if site.failure_reason == Some(FailureReason::UndefinedReference) {
        return Ok(None);
    }
    let finalized: BTreeMap<String, f64> = report
        .sites
        .iter()
        .take(site_index)
        .map(|s| (s.site_id.clone(), s.final_rate))
        .collect();
    let delta_i = ctx.measure(&finalized, site_index, site.final_rate, site.iterations_used)?;
    Ok(Some(delta_i))
}

/// Adapt a batch of instances; in population mode also aggregate per-site
/// converged-rate statistics for offline reuse.
pub fn adapt_rates_batch(
    net: &Network,
    inputs: &[Vec<f64>],
    cfg: &RateInConfig,
    population_mode: bool,
) -> Result<BatchAdaptation> {
    if inputs.is_empty() {
        return Err(Error::config("batch adaptation needs at least one input"));
    }
    cfg.validate()?;
    let reports: Result<Vec<RateInReport>> = inputs
        .iter()
        .map(|x| adapt_rates(net, x, cfg))
        .collect();
    let reports = reports?;
    let population = population_mode.then(|| population_stats(net, &reports));
    Ok(BatchAdaptation {
        reports,
        population,
    })
}

/// Per-site mean/std of converged rates plus failure counts.
pub fn population_stats(net: &Network, reports: &[RateInReport]) -> Vec<SiteRateStats> {
    net.site_ids()
        .into_iter()
        .map(|site_id| {
            let mut rates = Vec::new();
            let mut failed = 0usize;
            for r in reports {
                for s in &r.sites {
                    if s.site_id == site_id {
                        if s.converged {
                            rates.push(s.final_rate);
                        } else {
                            failed += 1;
                        }
                    }
                }
            }
            let n = rates.len();
            let (mean, std) = if n == 0 {
                (0.0, 0.0)
            } else {
                let mean = rates.iter().sum::<f64>() / n as f64;
                let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
                (mean, var.sqrt())
            };
            SiteRateStats {
                site_id,
                mean_rate: mean,
                std_rate: std,
                converged: n,
                failed,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Record files
// ---------------------------------------------------------------------------

const REPORT_HEADER: &[&str] = &[
    "instance_id",
    "site_id",
    "final_rate",
    "final_delta_i",
    "iterations",
    "converged",
    "failure_reason",
];

/// Write per-instance reports as one record file. Optional comment lines
/// (provenance) go above the header, prefixed with `#`.
pub fn write_reports_csv(
    path: &Path,
    reports: &[RateInReport],
    comment: Option<&str>,
) -> Result<()> {
    let mut raw = Vec::new();
    if let Some(c) = comment {
        writeln!(raw, "# {c}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut raw);
        w.write_record(REPORT_HEADER)?;
        for (i, r) in reports.iter().enumerate() {
            for s in &r.sites {
                w.write_record([
                    i.to_string(),
                    s.site_id.clone(),
                    format!("{}", s.final_rate),
                    format!("{}", s.final_delta_i),
                    s.iterations_used.to_string(),
                    s.converged.to_string(),
                    s.failure_reason.map(|f| f.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
    }
    std::fs::write(path, raw)?;
    Ok(())
}

/// Read a report record file back, grouped by instance id in order.
pub fn read_reports_csv(path: &Path) -> Result<Vec<RateInReport>> {
    let content = std::fs::read_to_string(path)?;
    let body: String = content
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut reports: Vec<RateInReport> = Vec::new();
    let mut current_id: Option<usize> = None;
    for record in reader.records() {
        let record = record?;
        if record.len() != REPORT_HEADER.len() {
            return Err(Error::RecordFormat(format!(
                "expected {} fields, got {}",
                REPORT_HEADER.len(),
                record.len()
            )));
        }
        let parse_err = |what: &str| Error::RecordFormat(format!("bad {what} in `{record:?}`"));
        let instance: usize = record[0].parse().map_err(|_| parse_err("instance_id"))?;
        let site = SiteReport {
            site_id: record[1].to_string(),
            final_rate: record[2].parse().map_err(|_| parse_err("final_rate"))?,
            final_delta_i: record[3].parse().map_err(|_| parse_err("final_delta_i"))?,
            iterations_used: record[4].parse().map_err(|_| parse_err("iterations"))?,
            converged: record[5].parse().map_err(|_| parse_err("converged"))?,
            failure_reason: if record[6].is_empty() {
                None
            } else {
                Some(record[6].parse()?)
            },
        };
        if current_id != Some(instance) {
            if instance != reports.len() {
                return Err(Error::RecordFormat(format!(
                    "instance ids must be contiguous, saw {instance} after {}",
                    reports.len()
                )));
            }
            reports.push(RateInReport { sites: Vec::new() });
            current_id = Some(instance);
        }
        reports.last_mut().expect("pushed").sites.push(site);
    }
    if reports.is_empty() {
        return Err(Error::RecordFormat("report file holds no records".into()));
    }
    Ok(reports)
}

/// Write per-site population statistics.
pub fn write_population_csv(
    path: &Path,
    stats: &[SiteRateStats],
    comment: Option<&str>,
) -> Result<()> {
    let mut raw = Vec::new();
    if let Some(c) = comment {
        writeln!(raw, "# {c}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut raw);
        w.write_record(["site_id", "mean_rate", "std_rate", "converged", "failed"])?;
        for s in stats {
            w.write_record([
                s.site_id.clone(),
                format!("{}", s.mean_rate),
                format!("{}", s.std_rate),
                s.converged.to_string(),
                s.failed.to_string(),
            ])?;
        }
        w.flush()?;
    }
    std::fs::write(path, raw)?;
    Ok(())
}
