//! Scripted experiment drivers: noise-level sweep, training-size sweep,
//! initial-rate convergence study, per-layer sensitivity curves, and
//! adaptation-time profiling.
//!
//! Every sweep is reproducible from `(spec, seed)`: cells run as independent
//! jobs on a bounded worker pool and results merge by cell key, not
//! completion order, so the emitted CSVs are byte-identical across runs
//! (the timing table necessarily reports wall-clock values and is exempt).
//! Failed cells become rows with a failure column, never silent omissions.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::info::{Estimator, InfoLossSpec, MIEstimatorConfig, Reference};
use crate::mc::{mc_run, McSummary};
use crate::metrics::picp_and_width;
use crate::nn::{train_regression, Network};
use crate::policies::{activation_policy, DropoutPolicy};
use crate::ratein::{adapt_rates, RateInConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Constant { p: f64 },
    Scheduled { p: f64 },
    Activation { p_max: f64 },
    /// Rate adaptation; without an explicit target the threshold ties to the
    /// first constant policy's rate.
    RateIn {
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Constant { p } => format!("constant(p={p})"),
            PolicySpec::Scheduled { p } => format!("scheduled(p={p})"),
            PolicySpec::Activation { p_max } => format!("activation(p_max={p_max})"),
            PolicySpec::RateIn { epsilon: Some(e) } => format!("rate-in(eps={e})"),
            PolicySpec::RateIn { epsilon: None } => "rate-in".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    MiFixed,
    MiAdaptive,
    Ssim,
}

impl EstimatorChoice {
    pub fn to_spec(self, epsilon: f64, delta: f64) -> Result<InfoLossSpec> {
        match self {
            EstimatorChoice::MiFixed => InfoLossSpec::new(
                Estimator::Mi(MIEstimatorConfig::fixed(crate::info::DEFAULT_BINS)),
                Reference::NetworkInput,
                epsilon,
                delta,
            ),
            EstimatorChoice::MiAdaptive => InfoLossSpec::new(
                Estimator::Mi(MIEstimatorConfig::adaptive(crate::info::DEFAULT_BINS)),
                Reference::NetworkInput,
                epsilon,
                delta,
            ),
            EstimatorChoice::Ssim => {
                InfoLossSpec::new(Estimator::Ssim, Reference::LayerInput, epsilon, delta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Noise-sweep axis.
    pub sigmas: Vec<f64>,
    /// Size-sweep axis and its fixed noise level.
    pub sizes: Vec<usize>,
    pub size_sweep_sigma: f64,
    pub policies: Vec<PolicySpec>,
    pub estimator: EstimatorChoice,
    pub delta: f64,
    pub n_max: usize,
    pub adapt_lr: f64,
    pub mask_samples: usize,
    pub t_passes: usize,
    pub z: f64,
    pub repeats: usize,
    pub epochs: usize,
    pub train_lr: f64,
    pub seed: u64,
    pub workers: usize,
    /// Convergence study grids and parameters.
    pub eps_grid: Vec<f64>,
    pub p_init_grid: Vec<f64>,
    pub conv_sigma: f64,
    pub conv_n_max: usize,
    pub conv_instances: usize,
    /// Layer-sensitivity grid and parameters.
    pub rate_grid: Vec<f64>,
    pub sens_sigma: f64,
    pub sens_mask_repeats: usize,
    pub sens_instances: usize,
    /// Timing axis.
    pub instance_counts: Vec<usize>,
    pub timing_repeats: usize,
    /// Where CSVs land; in-memory only when absent.
    pub out_dir: Option<PathBuf>,
    /// Extra provenance line for file headers.
    pub provenance: Option<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".to_string(),
            n_train: 100,
            n_test: 100,
            sigmas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            sizes: vec![25, 50, 100, 200],
            size_sweep_sigma: 0.01,
            policies: vec![
                PolicySpec::Constant { p: 0.1 },
                PolicySpec::RateIn { epsilon: None },
            ],
            estimator: EstimatorChoice::MiFixed,
            delta: 0.01,
            n_max: 30,
            adapt_lr: 0.9,
            mask_samples: 1,
            t_passes: 30,
            z: 1.96,
            repeats: 5,
            epochs: 1000,
            train_lr: 0.01,
            seed: data::DEFAULT_SEED,
            workers: 1,
            eps_grid: vec![0.1, 0.3, 0.5],
            p_init_grid: vec![0.05, 0.2, 0.35, 0.5, 0.7],
            conv_sigma: 0.5,
            conv_n_max: 100,
            conv_instances: 10,
            rate_grid: vec![0.05, 0.1, 0.2, 0.4],
            sens_sigma: 0.1,
            sens_mask_repeats: 30,
            sens_instances: 10,
            instance_counts: vec![10, 100, 1000],
            timing_repeats: 3,
            out_dir: None,
            provenance: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("experiment names no policies"));
        }
        if self.t_passes < 2 {
            return Err(Error::config("t_passes must be >= 2"));
        }
        if self.z <= 0.0 {
            return Err(Error::config("z must be positive"));
        }
        for p in &self.policies {
            // Constructibility check; rates validate on construction.
            match *p {
                PolicySpec::Constant { p } => {
                    DropoutPolicy::constant(p)?;
                }
                PolicySpec::Scheduled { p } => {
                    DropoutPolicy::scheduled(p, self.t_passes)?;
                }
                PolicySpec::Activation { p_max } => {
                    DropoutPolicy::constant(p_max)?;
                }
                PolicySpec::RateIn { epsilon } => {
                    let eps = self.resolve_epsilon(epsilon)?;
                    self.estimator.to_spec(eps, self.delta)?;
                }
            }
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        let has_rate_in = self
            .policies
            .iter()
            .any(|p| matches!(p, PolicySpec::RateIn { .. }));
        let has_constant = self
            .policies
            .iter()
            .any(|p| matches!(p, PolicySpec::Constant { .. }));
        if !has_rate_in || !has_constant || self.policies.len() < 2 {
            return Err(Error::config(
                "sweeps need at least two policies including rate-in and constant",
            ));
        }
        Ok(())
    }

    fn resolve_epsilon(&self, explicit: Option<f64>) -> Result<f64> {
        if let Some(e) = explicit {
            return Ok(e);
        }
        self.policies
            .iter()
            .find_map(|p| match p {
                PolicySpec::Constant { p } => Some(*p),
                _ => None,
            })
            .ok_or_else(|| {
                Error::config("rate-in epsilon is unset and no constant policy provides one")
            })
    }

    fn ratein_config(&self, epsilon: Option<f64>, seed_value: u64) -> Result<RateInConfig> {
        let eps = self.resolve_epsilon(epsilon)?;
        let spec = self.estimator.to_spec(eps, self.delta)?;
        let mut cfg = RateInConfig::new(spec, eps.min(crate::ratein::DEFAULT_P_MAX), seed_value)?;
        cfg.n_max = self.n_max;
        cfg.lr = self.adapt_lr;
        cfg.mask_samples = self.mask_samples;
        Ok(cfg)
    }

    fn comment(&self) -> String {
        match &self.provenance {
            Some(p) => p.clone(),
            None => format!("experiment={} seed={}", self.name, self.seed),
        }
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Aggregate row of an IER sweep: medians over successful repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: f64,
    pub policy: String,
    pub picp: f64,
    pub width: f64,
    pub ier: f64,
    pub repeats: usize,
    pub ier_std: f64,
}

/// Per-repeat row for the long-format companion file.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepLongRow {
    pub axis: f64,
    pub policy: String,
    pub repeat: usize,
    pub picp: f64,
    pub width: f64,
    pub ier: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis_name: &'static str,
    pub rows: Vec<SweepRow>,
    pub long: Vec<SweepLongRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub p_init: f64,
    pub site_id: String,
    pub mean_final_rate: f64,
    pub std_final_rate: f64,
    pub converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub site_id: String,
    pub rate: f64,
    pub estimator: String,
    pub mean_delta_i: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub instances: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub worst_seconds: f64,
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// IER versus noise level at fixed training size.
pub fn run_noise_sweep(spec: &ExperimentSpec) -> Result<SweepTable> {
    spec.validate_sweep()?;
    let cells: Vec<(usize, f64, usize)> = spec
        .sigmas
        .iter()
        .enumerate()
        .flat_map(|(ai, &sigma)| (0..spec.repeats).map(move |k| (ai, sigma, k)))
        .collect();
    let results = run_cells(spec, &cells, |spec, &(ai, sigma, k)| {
        let cell_seed = seed::mix_many(spec.seed, &[1, ai as u64, k as u64]);
        sweep_cell(spec, sigma, spec.n_train, cell_seed)
    })?;
    let table = aggregate_sweep("sigma", spec, &cells, results)?;
    if let Some(dir) = &spec.out_dir {
        write_sweep(dir, "noise_sweep", &table, &spec.comment())?;
    }
    Ok(table)
}

/// IER versus training-set size at fixed noise level.
pub fn run_size_sweep(spec: &ExperimentSpec) -> Result<SweepTable> {
    spec.validate_sweep()?;
    let cells: Vec<(usize, f64, usize)> = spec
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(ai, &size)| (0..spec.repeats).map(move |k| (ai, size as f64, k)))
        .collect();
    let results = run_cells(spec, &cells, |spec, &(ai, size, k)| {
        let cell_seed = seed::mix_many(spec.seed, &[2, ai as u64, k as u64]);
        sweep_cell(spec, spec.size_sweep_sigma, size as usize, cell_seed)
    })?;
    let table = aggregate_sweep("size", spec, &cells, results)?;
    if let Some(dir) = &spec.out_dir {
        write_sweep(dir, "size_sweep", &table, &spec.comment())?;
    }
    Ok(table)
}

type CellOutcome = std::result::Result<Vec<(String, f64, f64, f64)>, String>;

/// Train one cell's network and evaluate every policy on the test set.
/// Returns per-policy (label, picp, width, ier) or a recorded failure.
fn sweep_cell(spec: &ExperimentSpec, sigma: f64, n_train: usize, cell_seed: u64) -> CellOutcome {
    let build = || -> Result<Vec<(String, f64, f64, f64)>> {
        let (train, test) = data::gen_regression_split(n_train, spec.n_test, sigma, cell_seed)?;
        let net = train_regression(
            &train.feature_rows(),
            &train.ys,
            Network::regression_arch(),
            spec.epochs,
            spec.train_lr,
            seed::mix(cell_seed, 100),
        )?;
        let mut out = Vec::new();
        for (pi, pol) in spec.policies.iter().enumerate() {
            let policy_seed = seed::mix_many(cell_seed, &[200, pi as u64]);
            let summaries = evaluate_policy(spec, &net, &train, &test, pol, policy_seed)?;
            let m = picp_and_width(&test.ys, &summaries, spec.z)?;
            out.push((pol.label(), m.picp, m.mean_width, m.ier));
        }
        Ok(out)
    };
    build().map_err(|e| e.to_string())
}

fn evaluate_policy(
    spec: &ExperimentSpec,
    net: &Network,
    train: &data::RegressionDataset,
    test: &data::RegressionDataset,
    pol: &PolicySpec,
    policy_seed: u64,
) -> Result<Vec<McSummary>> {
    let shared: Option<DropoutPolicy> = match *pol {
        PolicySpec::Constant { p } => Some(DropoutPolicy::constant(p)?),
        PolicySpec::Scheduled { p } => Some(DropoutPolicy::scheduled(p, spec.t_passes)?),
        PolicySpec::Activation { p_max } => {
            Some(activation_policy(net, &train.feature_rows(), p_max)?.0)
        }
        PolicySpec::RateIn { .. } => None,
    };
    let ratein_cfg = match *pol {
        PolicySpec::RateIn { epsilon } => Some(spec.ratein_config(epsilon, seed::mix(policy_seed, 1))?),
        _ => None,
    };
    let mut summaries = Vec::with_capacity(test.len());
    for (i, &x) in test.xs.iter().enumerate() {
        let policy = match (&shared, &ratein_cfg) {
            (Some(p), _) => p.clone(),
            (None, Some(cfg)) => {
                let report = adapt_rates(net, &[x], cfg)?;
                DropoutPolicy::from_rate_in(&report)?
            }
            _ => unreachable!(),
        };
        summaries.push(mc_run(
            net,
            &[x],
            &policy,
            spec.t_passes,
            spec.z,
            seed::mix_many(policy_seed, &[1000, i as u64]),
        )?);
    }
    Ok(summaries)
}

fn aggregate_sweep(
    axis_name: &'static str,
    spec: &ExperimentSpec,
    cells: &[(usize, f64, usize)],
    results: Vec<CellOutcome>,
) -> Result<SweepTable> {
    // (axis value bits, policy) -> per-repeat (picp, width, ier)
    type Grouped = BTreeMap<(u64, String), Vec<(f64, f64, f64)>>;
    let mut long = Vec::new();
    let mut grouped: Grouped = BTreeMap::new();
    let mut axes: BTreeMap<u64, f64> = BTreeMap::new();
    for (&(_, axis, k), outcome) in cells.iter().zip(results) {
        let key = axis.to_bits();
        axes.insert(key, axis);
        match outcome {
            Ok(rows) => {
                for (label, picp, width, ier) in rows {
                    long.push(SweepLongRow {
                        axis,
                        policy: label.clone(),
                        repeat: k,
                        picp,
                        width,
                        ier,
                        failure: None,
                    });
                    grouped.entry((key, label)).or_default().push((picp, width, ier));
                }
            }
            Err(msg) => {
                for pol in &spec.policies {
                    long.push(SweepLongRow {
                        axis,
                        policy: pol.label(),
                        repeat: k,
                        picp: f64::NAN,
                        width: f64::NAN,
                        ier: f64::NAN,
                        failure: Some(msg.clone()),
                    });
                }
            }
        }
    }
    long.sort_by(|a, b| {
        a.axis
            .total_cmp(&b.axis)
            .then_with(|| a.policy.cmp(&b.policy))
            .then(a.repeat.cmp(&b.repeat))
    });
    let mut rows = Vec::new();
    for ((key, policy), metrics) in grouped {
        let axis = axes[&key];
        let iers: Vec<f64> = metrics.iter().map(|m| m.2).collect();
        rows.push(SweepRow {
            axis,
            policy,
            picp: median(metrics.iter().map(|m| m.0)),
            width: median(metrics.iter().map(|m| m.1)),
            ier: median(iers.iter().copied()),
            repeats: metrics.len(),
            ier_std: std_dev(&iers),
        });
    }
    rows.sort_by(|a, b| a.axis.total_cmp(&b.axis).then_with(|| a.policy.cmp(&b.policy)));
    Ok(SweepTable {
        axis_name,
        rows,
        long,
    })
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// Final rate versus initial rate for each loss target in `eps_grid`.
pub fn run_convergence_study(spec: &ExperimentSpec) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    if spec.p_init_grid.len() < 5 {
        return Err(Error::config("convergence study needs >= 5 initial rates"));
    }
    // One trained net and instance set per repeat, shared across the grid.
    let mut nets = Vec::new();
    for k in 0..spec.repeats {
        let rep_seed = seed::mix_many(spec.seed, &[3, k as u64]);
        let (train, test) =
            data::gen_regression_split(spec.n_train, spec.conv_instances, spec.conv_sigma, rep_seed)?;
        let net = train_regression(
            &train.feature_rows(),
            &train.ys,
            Network::regression_arch(),
            spec.epochs,
            spec.train_lr,
            seed::mix(rep_seed, 100),
        )?;
        nets.push((net, test));
    }

    let cells: Vec<(usize, usize, usize)> = (0..spec.eps_grid.len())
        .flat_map(|e| {
            (0..spec.p_init_grid.len())
                .flat_map(move |p| (0..spec.repeats).map(move |k| (e, p, k)))
        })
        .collect();
    let results = run_cells(spec, &cells, |spec, &(e, p, k)| {
        let eps = spec.eps_grid[e];
        let p_init = spec.p_init_grid[p];
        let (net, test) = &nets[k];
        let run = || -> Result<Vec<(String, Option<f64>)>> {
            let mut cfg = spec.ratein_config(Some(eps), seed::mix_many(spec.seed, &[4, k as u64]))?;
            cfg.n_max = spec.conv_n_max;
            cfg.p_init = crate::ratein::PInit::Uniform(p_init);
            let mut out = Vec::new();
            for &x in &test.xs {
                let report = adapt_rates(net, &[x], &cfg)?;
                for s in &report.sites {
                    out.push((s.site_id.clone(), s.converged.then_some(s.final_rate)));
                }
            }
            Ok(out)
        };
        run().map_err(|err| err.to_string())
    })?;

    let mut acc: BTreeMap<(usize, usize, String), (Vec<f64>, usize)> = BTreeMap::new();
    for (&(e, p, _), outcome) in cells.iter().zip(results) {
        let rows = outcome.map_err(Error::InvalidConfig)?;
        for (site, rate) in rows {
            let entry = acc.entry((e, p, site)).or_default();
            match rate {
                Some(r) => entry.0.push(r),
                None => entry.1 += 1,
            }
        }
    }
    let mut table = Vec::new();
    for ((e, p, site_id), (rates, failed)) in acc {
        let n = rates.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            rates.iter().sum::<f64>() / n as f64
        };
        let std = if n == 0 { f64::NAN } else { std_dev(&rates) };
        table.push(ConvergenceRow {
            epsilon: spec.eps_grid[e],
            p_init: spec.p_init_grid[p],
            site_id,
            mean_final_rate: mean,
            std_final_rate: std,
            converged: n,
            failed,
        });
    }
    if let Some(dir) = &spec.out_dir {
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.epsilon),
                    format!("{}", r.p_init),
                    r.site_id.clone(),
                    format!("{}", r.mean_final_rate),
                    format!("{}", r.std_final_rate),
                    r.converged.to_string(),
                    r.failed.to_string(),
                ]
            })
            .collect();
        write_table(
            &dir.join("convergence_study.csv"),
            &spec.comment(),
            &[
                "epsilon",
                "p_init",
                "site_id",
                "mean_final_rate",
                "std_final_rate",
                "converged",
                "failed",
            ],
            &rows,
        )?;
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Layer sensitivity
// ---------------------------------------------------------------------------

/// Mean information loss per site as the dropout rate grows, under both the
/// MI and SSIM estimators, on a net trained with the standard recipe.
pub fn run_layer_sensitivity(spec: &ExperimentSpec) -> Result<Vec<SensitivityRow>> {
    spec.validate()?;
    for &r in &spec.rate_grid {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::config(format!("rate {r} outside (0, 1)")));
        }
    }
    let base_seed = seed::mix(spec.seed, 5);
    let (train, test) =
        data::gen_regression_split(spec.n_train, spec.sens_instances, spec.sens_sigma, base_seed)?;
    let net = train_regression(
        &train.feature_rows(),
        &train.ys,
        Network::regression_arch(),
        spec.epochs,
        spec.train_lr,
        seed::mix(base_seed, 100),
    )?;

    let estimators = [
        ("mi", EstimatorChoice::MiFixed),
        ("ssim", EstimatorChoice::Ssim),
    ];
    let mut table = Vec::new();
    for site_index in 0..net.site_ids().len() {
        let site_id = net.site_ids()[site_index].clone();
        for &rate in &spec.rate_grid {
            for (label, choice) in estimators {
                let loss_spec = choice.to_spec(0.1, spec.delta)?;
                let mut total = 0.0;
                let mut count = 0usize;
                for (xi, &x) in test.xs.iter().enumerate() {
                    for rep in 0..spec.sens_mask_repeats {
                        let d = measure_site_loss(
                            &net,
                            &[x],
                            site_index,
                            rate,
                            &loss_spec,
                            seed::mix_many(base_seed, &[7, xi as u64, rep as u64, rate.to_bits()]),
                        )?;
                        total += d;
                        count += 1;
                    }
                }
                table.push(SensitivityRow {
                    site_id: site_id.clone(),
                    rate,
                    estimator: label.to_string(),
                    mean_delta_i: total / count as f64,
                    repeats: count,
                });
            }
        }
    }
    if let Some(dir) = &spec.out_dir {
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|r| {
                vec![
                    r.site_id.clone(),
                    format!("{}", r.rate),
                    r.estimator.clone(),
                    format!("{}", r.mean_delta_i),
                    r.repeats.to_string(),
                ]
            })
            .collect();
        write_table(
            &dir.join("layer_sensitivity.csv"),
            &spec.comment(),
            &["site_id", "rate", "estimator", "mean_delta_i", "repeats"],
            &rows,
        )?;
    }
    Ok(table)
}

/// Loss one dropout application causes at a single site, all other sites
/// disabled. Exposed for the monotonicity checks in the test suites.
pub fn measure_site_loss(
    net: &Network,
    x: &[f64],
    site_index: usize,
    rate: f64,
    loss_spec: &InfoLossSpec,
    mask_seed: u64,
) -> Result<f64> {
    let site_ids = net.site_ids();
    let site_id = site_ids
        .get(site_index)
        .ok_or_else(|| Error::config(format!("no site {site_index}")))?;
    let mut rates = net.zero_rates();
    rates.insert(site_id.clone(), rate);
    let (_, traces) = net.forward(x, &rates, mask_seed)?;
    let tr = &traces[site_index];
    Ok(crate::info::measure_loss(loss_spec, &tr.pre, &tr.pre, &tr.post)?.delta_i)
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

/// Wall time of batch rate adaptation as the instance count grows.
pub fn run_timing(spec: &ExperimentSpec) -> Result<Vec<TimingRow>> {
    spec.validate()?;
    let base_seed = seed::mix(spec.seed, 6);
    let (train, _) = data::gen_regression_split(spec.n_train, 1, spec.sens_sigma, base_seed)?;
    let net = train_regression(
        &train.feature_rows(),
        &train.ys,
        Network::regression_arch(),
        spec.epochs,
        spec.train_lr,
        seed::mix(base_seed, 100),
    )?;
    let cfg = spec.ratein_config(Some(0.1), seed::mix(base_seed, 9))?;

    let mut table = Vec::new();
    for &n in &spec.instance_counts {
        let inputs: Vec<Vec<f64>> = data::gen_regression(n, spec.sens_sigma, seed::mix(base_seed, n as u64))?
            .xs
            .into_iter()
            .map(|x| vec![x])
            .collect();
        let mut times = Vec::with_capacity(spec.timing_repeats);
        for _ in 0..spec.timing_repeats {
            let start = Instant::now();
            crate::ratein::adapt_rates_batch(&net, &inputs, &cfg, false)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        table.push(TimingRow {
            instances: n,
            mean_seconds: mean,
            std_seconds: std_dev(&times),
            worst_seconds: times.iter().cloned().fold(0.0, f64::max),
        });
    }
    if let Some(dir) = &spec.out_dir {
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|r| {
                vec![
                    r.instances.to_string(),
                    format!("{}", r.mean_seconds),
                    format!("{}", r.std_seconds),
                    format!("{}", r.worst_seconds),
                ]
            })
            .collect();
        write_table(
            &dir.join("timing.csv"),
            &spec.comment(),
            &["instances", "mean_seconds", "std_seconds", "worst_seconds"],
            &rows,
        )?;
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Worker pool and CSV plumbing
// ---------------------------------------------------------------------------

/// Run cells on a bounded pool; results come back in cell order regardless
/// of completion order.
fn run_cells<C, R, F>(spec: &ExperimentSpec, cells: &[C], job: F) -> Result<Vec<R>>
where
    C: Sync,
    R: Send,
    F: Fn(&ExperimentSpec, &C) -> R + Sync,
{
    use rayon::prelude::*;
    let workers = spec.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| job(spec, c)).collect()))
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Write one CSV with a provenance comment line; row widths are validated
/// against the header before anything lands on disk.
pub fn write_table(
    path: &Path,
    comment: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::config(format!(
                "row {i} has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut raw = Vec::new();
    writeln!(raw, "# {comment}")?;
    {
        let mut w = csv::Writer::from_writer(&mut raw);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    std::fs::write(path, raw)?;
    Ok(())
}

fn write_sweep(dir: &Path, name: &str, table: &SweepTable, comment: &str) -> Result<()> {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.axis),
                r.policy.clone(),
                format!("{}", r.picp),
                format!("{}", r.width),
                format!("{}", r.ier),
                r.repeats.to_string(),
                format!("{}", r.ier_std),
            ]
        })
        .collect();
    write_table(
        &dir.join(format!("{name}.csv")),
        comment,
        &[table.axis_name, "policy", "picp", "width", "ier", "repeats", "std"],
        &rows,
    )?;
    let long_rows: Vec<Vec<String>> = table
        .long
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.axis),
                r.policy.clone(),
                r.repeat.to_string(),
                format!("{}", r.picp),
                format!("{}", r.width),
                format!("{}", r.ier),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_table(
        &dir.join(format!("{name}_long.csv")),
        comment,
        &[table.axis_name, "policy", "repeat", "picp", "width", "ier", "failure"],
        &long_rows,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec() -> ExperimentSpec {
        ExperimentSpec {
            sigmas: vec![0.1],
            sizes: vec![25],
            repeats: 1,
            epochs: 60,
            n_test: 12,
            n_train: 40,
            t_passes: 10,
            conv_instances: 2,
            sens_instances: 2,
            sens_mask_repeats: 3,
            instance_counts: vec![4, 8],
            timing_repeats: 1,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn empty_policy_list_is_rejected() {
        let spec = ExperimentSpec {
            policies: vec![],
            ..quick_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sweep_requires_rate_in_and_constant() {
        let spec = ExperimentSpec {
            policies: vec![PolicySpec::Constant { p: 0.1 }],
            ..quick_spec()
        };
        assert!(run_noise_sweep(&spec).is_err());
    }

    #[test]
    fn noise_sweep_smoke_produces_finite_iers() {
        let table = run_noise_sweep(&quick_spec()).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert!(row.ier.is_finite() && row.ier > 0.0, "row {row:?}");
            assert_eq!(row.repeats, 1);
        }
    }

    #[test]
    fn size_sweep_single_size_degenerates_to_one_axis_value() {
        let table = run_size_sweep(&quick_spec()).unwrap();
        let axes: std::collections::BTreeSet<u64> =
            table.rows.iter().map(|r| r.axis.to_bits()).collect();
        assert_eq!(axes.len(), 1);
    }

    #[test]
    fn sweep_is_reproducible() {
        let spec = quick_spec();
        let a = run_noise_sweep(&spec).unwrap();
        let b = run_noise_sweep(&spec).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.long, b.long);
    }

    #[test]
    fn parallel_and_serial_cells_agree() {
        let serial = quick_spec();
        let parallel = ExperimentSpec {
            workers: 4,
            ..quick_spec()
        };
        let a = run_noise_sweep(&serial).unwrap();
        let b = run_noise_sweep(&parallel).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn convergence_study_reports_all_grid_points() {
        let mut spec = quick_spec();
        spec.eps_grid = vec![0.3];
        spec.conv_n_max = 40;
        let table = run_convergence_study(&spec).unwrap();
        // one epsilon x five p_init x two sites
        assert_eq!(table.len(), 10);
        for row in &table {
            assert_eq!(row.converged + row.failed, spec.repeats * spec.conv_instances);
        }
    }

    #[test]
    fn convergence_study_needs_grid() {
        let mut spec = quick_spec();
        spec.p_init_grid = vec![0.1];
        assert!(run_convergence_study(&spec).is_err());
    }

    #[test]
    fn layer_sensitivity_zero_rate_is_zero_loss() {
        let spec = quick_spec();
        let net_seed = seed::mix(spec.seed, 5);
        let (train, _) = data::gen_regression_split(40, 2, 0.1, net_seed).unwrap();
        let net = train_regression(
            &train.feature_rows(),
            &train.ys,
            Network::regression_arch(),
            60,
            0.01,
            seed::mix(net_seed, 100),
        )
        .unwrap();
        for choice in [EstimatorChoice::MiFixed, EstimatorChoice::Ssim] {
            let ls = choice.to_spec(0.1, 0.01).unwrap();
            let d = measure_site_loss(&net, &[0.3], 0, 0.0, &ls, 1).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn timing_rows_have_sane_shape() {
        let table = run_timing(&quick_spec()).unwrap();
        assert_eq!(table.len(), 2);
        for row in &table {
            assert!(row.worst_seconds >= row.mean_seconds - 1e-12);
            assert!(row.mean_seconds > 0.0);
        }
    }

    #[test]
    fn csv_files_are_emitted_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = quick_spec();
        spec.out_dir = Some(dir.path().join("a"));
        run_noise_sweep(&spec).unwrap();
        spec.out_dir = Some(dir.path().join("b"));
        run_noise_sweep(&spec).unwrap();
        let a = std::fs::read(dir.path().join("a/noise_sweep.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b/noise_sweep.csv")).unwrap();
        assert_eq!(a, b);
        assert!(dir.path().join("a/noise_sweep_long.csv").exists());
    }

    #[test]
    fn table_schema_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let bad = vec![vec!["1".to_string()]];
        assert!(write_table(&dir.path().join("x.csv"), "c", &["a", "b"], &bad).is_err());
    }
}
