//! The five subcommands. Each validates its config section completely, then
//! executes; an invalid config never produces partial output files.

use std::path::Path;

use log::info;

use ratein_core::data;
use ratein_core::experiments::{
    self, write_table, ExperimentSpec,
};
use ratein_core::mc::{mc_classify, mc_run};
use ratein_core::metrics;
use ratein_core::nn::{
    train_classifier_history, train_regression_history, Network,
};
use ratein_core::policies::{activation_policy, DropoutPolicy};
use ratein_core::ratein::{
    adapt_rates_batch, read_reports_csv, write_population_csv, write_reports_csv,
};
use ratein_core::seed;

use crate::config::{
    ExperimentKind, McSection, PolicyConfig, RunConfig, SummaryRow, Task, MC_STREAM,
    RATEIN_STREAM, TEST_STREAM, TRAIN_STREAM,
};
use crate::CliError;

pub fn cmd_train(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let t = cfg.validate_train()?.clone();
    if dry_run {
        println!(
            "train (dry run): task={:?} n={} sigma={} epochs={} -> {}",
            t.task,
            t.n,
            t.sigma,
            t.epochs,
            cfg.resolve(&t.model_file).display()
        );
        return Ok(());
    }
    let train_seed = seed::mix(cfg.seed, TRAIN_STREAM);
    let (net, history) = match t.task {
        Task::Regression => {
            let dataset = data::gen_regression(t.n, t.sigma, train_seed)
                .map_err(CliError::from_config_err)?;
            let arch = arch_for_regression(&t.hidden);
            train_regression_history(
                &dataset.feature_rows(),
                &dataset.ys,
                arch,
                t.epochs,
                t.lr,
                cfg.seed,
            )
            .map_err(CliError::from_runtime_err)?
        }
        Task::Classification => {
            let dataset = data::gen_blobs(t.n, t.classes, t.separation, train_seed)
                .map_err(CliError::from_config_err)?;
            let arch = Network::classifier_arch(2, &t.hidden, t.classes);
            train_classifier_history(&dataset.xs, &dataset.labels, arch, t.epochs, t.lr, cfg.seed)
                .map_err(CliError::from_runtime_err)?
        }
    };
    let model_path = cfg.resolve(&t.model_file);
    net.save_with_comment(&model_path, Some(&cfg.provenance()))
        .map_err(CliError::from_runtime_err)?;
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), format!("{l}")])
        .collect();
    write_table(
        &cfg.resolve(&t.loss_file),
        &cfg.provenance(),
        &["epoch", "loss"],
        &rows,
    )
    .map_err(CliError::from_runtime_err)?;
    let final_loss = history.last().copied().unwrap_or(f64::NAN);
    info!("trained model -> {} (final loss {final_loss})", model_path.display());
    println!("model: {}", model_path.display());
    println!("final_loss: {final_loss}");
    Ok(())
}

/// The regression net ships with a dropout site after each hidden ReLU.
fn arch_for_regression(hidden: &[usize]) -> Vec<ratein_core::nn::LayerSpec> {
    use ratein_core::nn::LayerSpec;
    let mut layers = Vec::new();
    let mut prev = 1;
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(LayerSpec::dense(prev, h));
        layers.push(LayerSpec::relu(h));
        layers.push(LayerSpec::dropout_site(h, format!("drop{}", i + 1)));
        prev = h;
    }
    layers.push(LayerSpec::dense(prev, 1));
    layers
}

/// Instance set shared by `ratein` and `mc`: the test stream of the config
/// seed, or an explicit dataset file.
fn load_instances(
    cfg: &RunConfig,
    dataset_file: Option<&str>,
    n: usize,
    sigma: f64,
) -> Result<data::RegressionDataset, CliError> {
    match dataset_file {
        Some(f) => data::RegressionDataset::read_csv(&cfg.resolve(f))
            .map_err(CliError::from_runtime_err),
        None => data::gen_regression(n, sigma, seed::mix(cfg.seed, TEST_STREAM))
            .map_err(CliError::from_config_err),
    }
}

pub fn cmd_ratein(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let r = cfg.validate_ratein()?.clone();
    if dry_run {
        println!(
            "ratein (dry run): model={} estimator={} epsilon={} instances={}",
            cfg.resolve(&r.model_file).display(),
            r.estimator,
            r.epsilon,
            r.n_instances
        );
        return Ok(());
    }
    let net = Network::load(&cfg.resolve(&r.model_file)).map_err(CliError::from_runtime_err)?;
    let dataset = load_instances(cfg, r.dataset_file.as_deref(), r.n_instances, r.sigma)?;
    let adapt_cfg = r.ratein_config(seed::mix(cfg.seed, RATEIN_STREAM))?;
    let inputs: Vec<Vec<f64>> = dataset.xs.iter().map(|&x| vec![x]).collect();
    let batch = adapt_rates_batch(&net, &inputs, &adapt_cfg, r.population)
        .map_err(CliError::from_runtime_err)?;

    let reports_path = cfg.resolve(&r.reports_file);
    write_reports_csv(&reports_path, &batch.reports, Some(&cfg.provenance()))
        .map_err(CliError::from_runtime_err)?;
    dataset
        .write_csv(&cfg.resolve(&r.dataset_out))
        .map_err(CliError::from_runtime_err)?;
    if let Some(pop) = &batch.population {
        write_population_csv(&cfg.resolve(&r.population_file), pop, Some(&cfg.provenance()))
            .map_err(CliError::from_runtime_err)?;
    }
    let converged: usize = batch.reports.iter().map(|r| r.converged_count()).sum();
    let total: usize = batch.reports.iter().map(|r| r.sites.len()).sum();
    info!("adaptation: {converged}/{total} site runs converged");
    println!("reports: {}", reports_path.display());
    println!("converged_sites: {converged}/{total}");
    Ok(())
}

pub fn cmd_mc(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let m = cfg.validate_mc()?.clone();
    if dry_run {
        println!(
            "mc (dry run): model={} T={} z={} policy={:?}",
            cfg.resolve(&m.model_file).display(),
            m.t,
            m.z,
            m.policy
        );
        return Ok(());
    }
    let net = Network::load(&cfg.resolve(&m.model_file)).map_err(CliError::from_runtime_err)?;
    match m.task {
        Task::Regression => mc_regression(cfg, &m, &net),
        Task::Classification => mc_classification(cfg, &m, &net),
    }
}

/// Resolve the per-instance policy. Shared policies return one object;
/// rate-adaptation reports give each instance its own rates.
fn instance_policies(
    cfg: &RunConfig,
    m: &McSection,
    net: &Network,
    n_instances: usize,
) -> Result<Vec<DropoutPolicy>, CliError> {
    match &m.policy {
        PolicyConfig::Constant { p } => {
            let pol = DropoutPolicy::constant(*p).map_err(CliError::from_config_err)?;
            Ok(vec![pol; n_instances])
        }
        PolicyConfig::Scheduled { p } => {
            let pol = DropoutPolicy::scheduled(*p, m.t).map_err(CliError::from_config_err)?;
            Ok(vec![pol; n_instances])
        }
        PolicyConfig::Activation { p_max, calib_n } => {
            let calib = data::gen_regression(
                calib_n.unwrap_or(100),
                m.sigma,
                seed::mix(cfg.seed, TRAIN_STREAM),
            )
            .map_err(CliError::from_config_err)?;
            let (pol, diags) = activation_policy(net, &calib.feature_rows(), *p_max)
                .map_err(CliError::from_runtime_err)?;
            for d in diags {
                log::warn!("activation policy: {d}");
            }
            Ok(vec![pol; n_instances])
        }
        PolicyConfig::RateIn { reports_file } => {
            let reports = read_reports_csv(&cfg.resolve(reports_file))
                .map_err(CliError::from_runtime_err)?;
            if reports.len() != n_instances {
                return Err(CliError::config(format!(
                    "report file holds {} instances, dataset has {n_instances}",
                    reports.len()
                )));
            }
            let site_ids: std::collections::BTreeSet<String> =
                net.site_ids().into_iter().collect();
            for r in &reports {
                for s in &r.sites {
                    if !site_ids.contains(&s.site_id) {
                        return Err(CliError::config(format!(
                            "report names unknown site `{}`",
                            s.site_id
                        )));
                    }
                }
            }
            reports
                .iter()
                .map(|r| DropoutPolicy::from_rate_in(r).map_err(CliError::from_config_err))
                .collect()
        }
    }
}

fn mc_regression(cfg: &RunConfig, m: &McSection, net: &Network) -> Result<(), CliError> {
    let dataset = load_instances(cfg, m.dataset_file.as_deref(), m.n_instances, m.sigma)?;
    let policies = instance_policies(cfg, m, net, dataset.len())?;
    let mc_seed = seed::mix(cfg.seed, MC_STREAM);
    let mut summaries = Vec::with_capacity(dataset.len());
    for (i, &x) in dataset.xs.iter().enumerate() {
        let s = mc_run(net, &[x], &policies[i], m.t, m.z, seed::mix(mc_seed, i as u64))
            .map_err(CliError::from_runtime_err)?;
        summaries.push(s);
    }

    let rows: Vec<Vec<String>> = summaries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                i.to_string(),
                format!("{}", dataset.xs[i]),
                format!("{}", dataset.ys[i]),
                format!("{}", s.mean[0]),
                format!("{}", s.std[0]),
                format!("{}", s.lower[0]),
                format!("{}", s.upper[0]),
            ]
        })
        .collect();
    let summaries_path = cfg.resolve(&m.summaries_file);
    write_table(
        &summaries_path,
        &cfg.provenance(),
        &["instance_id", "x", "y_true", "mean", "std", "lower", "upper"],
        &rows,
    )
    .map_err(CliError::from_runtime_err)?;

    let means: Vec<f64> = summaries.iter().map(|s| s.mean[0]).collect();
    let interval = metrics::picp_and_width(&dataset.ys, &summaries, m.z)
        .map_err(CliError::from_runtime_err)?;
    let mse = metrics::mse(&dataset.ys, &means).map_err(CliError::from_runtime_err)?;
    write_metrics(
        &cfg.resolve(&m.metrics_file),
        &cfg.provenance(),
        &[
            ("mse", mse),
            ("picp", interval.picp),
            ("mean_width", interval.mean_width),
            ("ier", interval.ier),
        ],
    )?;
    println!("summaries: {}", summaries_path.display());
    println!("picp: {} width: {} ier: {}", interval.picp, interval.mean_width, interval.ier);
    Ok(())
}

fn mc_classification(cfg: &RunConfig, m: &McSection, net: &Network) -> Result<(), CliError> {
    let dataset = data::gen_blobs(
        m.n_instances,
        m.classes,
        m.separation,
        seed::mix(cfg.seed, TEST_STREAM),
    )
    .map_err(CliError::from_config_err)?;
    let policies = instance_policies(cfg, m, net, dataset.xs.len())?;
    let mc_seed = seed::mix(cfg.seed, MC_STREAM);
    let mut rows = Vec::new();
    let mut correct = Vec::new();
    let mut errors = Vec::new();
    let mut uncertainty = Vec::new();
    let mut predicted = Vec::new();
    for (i, x) in dataset.xs.iter().enumerate() {
        let c = mc_classify(net, x, &policies[i], m.t, seed::mix(mc_seed, i as u64))
            .map_err(CliError::from_runtime_err)?;
        let ok = c.predicted == dataset.labels[i];
        correct.push(ok);
        errors.push(!ok);
        uncertainty.push(c.uncertainty);
        predicted.push(c.predicted);
        rows.push(vec![
            i.to_string(),
            dataset.labels[i].to_string(),
            c.predicted.to_string(),
            format!("{}", c.uncertainty),
        ]);
    }
    let summaries_path = cfg.resolve(&m.summaries_file);
    write_table(
        &summaries_path,
        &cfg.provenance(),
        &["instance_id", "label", "predicted", "uncertainty"],
        &rows,
    )
    .map_err(CliError::from_runtime_err)?;

    let acc = metrics::acc(&dataset.labels, &predicted).map_err(CliError::from_runtime_err)?;
    let auarc = metrics::auarc(&correct, &uncertainty).map_err(CliError::from_runtime_err)?;
    let ece = metrics::ece(&uncertainty, &errors, m.ece_bins).map_err(CliError::from_runtime_err)?;
    write_metrics(
        &cfg.resolve(&m.metrics_file),
        &cfg.provenance(),
        &[("acc", acc), ("auarc", auarc), ("ece", ece)],
    )?;
    println!("summaries: {}", summaries_path.display());
    println!("acc: {acc} auarc: {auarc} ece: {ece}");
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let e = cfg.validate_evaluate()?.clone();
    if dry_run {
        println!(
            "evaluate (dry run): summaries={} dataset={}",
            cfg.resolve(&e.summaries_file).display(),
            cfg.resolve(&e.dataset_file).display()
        );
        return Ok(());
    }
    let rows = crate::config::read_summaries_csv(&cfg.resolve(&e.summaries_file))?;
    let dataset = data::RegressionDataset::read_csv(&cfg.resolve(&e.dataset_file))
        .map_err(CliError::from_runtime_err)?;
    if dataset.len() != rows.len() {
        return Err(CliError::config(format!(
            "dataset has {} rows, summaries {}",
            dataset.len(),
            rows.len()
        )));
    }
    let summaries: Vec<ratein_core::mc::McSummary> = rows
        .iter()
        .map(|r: &SummaryRow| ratein_core::mc::McSummary {
            mean: vec![r.mean],
            std: vec![r.std],
            lower: vec![r.lower],
            upper: vec![r.upper],
            passes: vec![],
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let interval = metrics::picp_and_width(&dataset.ys, &summaries, e.z)
        .map_err(CliError::from_runtime_err)?;
    let mse = metrics::mse(&dataset.ys, &means).map_err(CliError::from_runtime_err)?;
    write_metrics(
        &cfg.resolve(&e.metrics_file),
        &cfg.provenance(),
        &[
            ("mse", mse),
            ("picp", interval.picp),
            ("mean_width", interval.mean_width),
            ("ier", interval.ier),
        ],
    )?;
    println!("mse: {mse} picp: {} ier: {}", interval.picp, interval.ier);
    Ok(())
}

pub fn cmd_experiment(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let section = cfg.validate_experiment()?;
    if dry_run {
        println!(
            "experiment (dry run): kind={:?} name={} repeats={} out={}",
            section.kind,
            section.spec.name,
            section.spec.repeats,
            cfg.out_dir.display()
        );
        return Ok(());
    }
    let spec: ExperimentSpec = section.spec;
    match section.kind {
        ExperimentKind::NoiseSweep => {
            let t = experiments::run_noise_sweep(&spec).map_err(CliError::from_runtime_err)?;
            println!("noise sweep rows: {}", t.rows.len());
        }
        ExperimentKind::SizeSweep => {
            let t = experiments::run_size_sweep(&spec).map_err(CliError::from_runtime_err)?;
            println!("size sweep rows: {}", t.rows.len());
        }
        ExperimentKind::ConvergenceStudy => {
            let t = experiments::run_convergence_study(&spec).map_err(CliError::from_runtime_err)?;
            println!("convergence rows: {}", t.len());
        }
        ExperimentKind::LayerSensitivity => {
            let t = experiments::run_layer_sensitivity(&spec).map_err(CliError::from_runtime_err)?;
            println!("sensitivity rows: {}", t.len());
        }
        ExperimentKind::Timing => {
            let t = experiments::run_timing(&spec).map_err(CliError::from_runtime_err)?;
            println!("timing rows: {}", t.len());
        }
    }
    Ok(())
}

fn write_metrics(path: &Path, provenance: &str, pairs: &[(&str, f64)]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|(k, v)| vec![k.to_string(), format!("{v}")])
        .collect();
    write_table(path, provenance, &["metric", "value"], &rows)
        .map_err(CliError::from_runtime_err)
}
