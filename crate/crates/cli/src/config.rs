//! Run configuration: one versioned TOML file per run, fully validated
//! before any command does work. Command-line flags override the global
//! fields. Relative file paths resolve against the output directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ratein_core::experiments::ExperimentSpec;
use ratein_core::info::{Estimator, InfoLossSpec, MIEstimatorConfig, Reference};
use ratein_core::ratein::{PInit, RateInConfig};
use ratein_core::seed;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Stream tags for dataset and command seeds, shared by all commands so a
/// single config seed reproduces the whole output tree.
pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;
pub const RATEIN_STREAM: u64 = 3;
pub const MC_STREAM: u64 = 4;

fn default_seed() -> u64 {
    123
}
fn default_workers() -> usize {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub train: Option<TrainSection>,
    pub ratein: Option<RateinSection>,
    pub mc: Option<McSection>,
    pub evaluate: Option<EvaluateSection>,
    pub experiment: Option<ExperimentSection>,
    /// Hash of the raw config file, filled after parsing.
    #[serde(skip)]
    pub config_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub task: Task,
    pub n: usize,
    pub sigma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub separation: f64,
    pub model_file: String,
    pub loss_file: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            task: Task::Regression,
            n: 100,
            sigma: 0.1,
            epochs: 1000,
            lr: 0.01,
            hidden: vec![50, 50],
            classes: 2,
            separation: 3.0,
            model_file: "model.txt".into(),
            loss_file: "train_loss.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateinSection {
    pub model_file: String,
    /// `mi-fixed`, `mi-adaptive`, or `ssim`.
    pub estimator: String,
    pub bins: usize,
    /// `network-input` or `layer-input`; SSIM defaults to `layer-input`.
    pub reference: Option<String>,
    pub epsilon: f64,
    pub delta: f64,
    pub n_max: usize,
    pub lr: f64,
    pub mask_samples: usize,
    /// Initial rate; defaults to `epsilon`.
    pub p_init: Option<f64>,
    pub p_min: f64,
    pub p_max: f64,
    pub n_instances: usize,
    pub sigma: f64,
    pub dataset_file: Option<String>,
    pub population: bool,
    pub reports_file: String,
    pub population_file: String,
    pub dataset_out: String,
}

impl Default for RateinSection {
    fn default() -> Self {
        RateinSection {
            model_file: "model.txt".into(),
            estimator: "mi-fixed".into(),
            bins: ratein_core::info::DEFAULT_BINS,
            reference: None,
            epsilon: 0.1,
            delta: 0.01,
            n_max: ratein_core::ratein::DEFAULT_N_MAX,
            lr: ratein_core::ratein::DEFAULT_LR,
            mask_samples: 1,
            p_init: None,
            p_min: 0.0,
            p_max: ratein_core::ratein::DEFAULT_P_MAX,
            n_instances: 100,
            sigma: 0.1,
            dataset_file: None,
            population: false,
            reports_file: "reports.csv".into(),
            population_file: "population.csv".into(),
            dataset_out: "dataset.csv".into(),
        }
    }
}

impl RateinSection {
    pub fn loss_spec(&self) -> Result<InfoLossSpec, CliError> {
        let reference = match (self.reference.as_deref(), self.estimator.as_str()) {
            (Some("network-input"), _) => Reference::NetworkInput,
            (Some("layer-input"), _) => Reference::LayerInput,
            (Some(other), _) => {
                return Err(CliError::config(format!(
                    "unknown reference `{other}` (expected network-input or layer-input)"
                )))
            }
            (None, "ssim") => Reference::LayerInput,
            (None, _) => Reference::NetworkInput,
        };
        let estimator = match self.estimator.as_str() {
            "mi-fixed" => Estimator::Mi(MIEstimatorConfig {
                mode: ratein_core::info::BinningMode::FixedBins(self.bins),
                normalization: ratein_core::info::Normalization::PerUnitMinMax,
            }),
            "mi-adaptive" => Estimator::Mi(MIEstimatorConfig {
                mode: ratein_core::info::BinningMode::EntropyEqualBins(self.bins),
                normalization: ratein_core::info::Normalization::PerUnitMinMax,
            }),
            "ssim" => Estimator::Ssim,
            other => {
                return Err(CliError::config(format!(
                    "unknown estimator `{other}` (expected mi-fixed, mi-adaptive, or ssim)"
                )))
            }
        };
        InfoLossSpec::new(estimator, reference, self.epsilon, self.delta).map_err(CliError::from_config_err)
    }

    pub fn ratein_config(&self, seed_value: u64) -> Result<RateInConfig, CliError> {
        let spec = self.loss_spec()?;
        let p0 = self.p_init.unwrap_or(self.epsilon).min(self.p_max);
        let mut cfg =
            RateInConfig::new(spec, p0, seed_value).map_err(CliError::from_config_err)?;
        cfg.n_max = self.n_max;
        cfg.lr = self.lr;
        cfg.mask_samples = self.mask_samples;
        cfg.p_min = self.p_min;
        cfg.p_max = self.p_max;
        cfg.p_init = PInit::Uniform(p0);
        cfg.validate().map_err(CliError::from_config_err)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum PolicyConfig {
    Constant { p: f64 },
    Scheduled { p: f64 },
    Activation { p_max: f64, calib_n: Option<usize> },
    RateIn { reports_file: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub model_file: String,
    pub task: Task,
    pub t: usize,
    pub z: f64,
    pub n_instances: usize,
    pub sigma: f64,
    pub classes: usize,
    pub separation: f64,
    pub dataset_file: Option<String>,
    pub policy: PolicyConfig,
    pub summaries_file: String,
    pub metrics_file: String,
    pub ece_bins: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            model_file: "model.txt".into(),
            task: Task::Regression,
            t: 30,
            z: 1.96,
            n_instances: 100,
            sigma: 0.1,
            classes: 2,
            separation: 3.0,
            dataset_file: None,
            policy: PolicyConfig::Constant { p: 0.1 },
            summaries_file: "summaries.csv".into(),
            metrics_file: "metrics.csv".into(),
            ece_bins: ratein_core::metrics::DEFAULT_ECE_BINS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub summaries_file: String,
    pub dataset_file: String,
    pub metrics_file: String,
    pub z: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            summaries_file: "summaries.csv".into(),
            dataset_file: "dataset.csv".into(),
            metrics_file: "eval_metrics.csv".into(),
            z: 1.96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NoiseSweep,
    SizeSweep,
    ConvergenceStudy,
    LayerSensitivity,
    Timing,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

impl RunConfig {
    /// Parse and hash a config file. Validation is separate and total.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let text = String::from_utf8(raw.clone())
            .map_err(|_| CliError::config("config file is not UTF-8"))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config parse error: {e}")))?;
        cfg.config_hash = seed::fnv1a(&raw);
        Ok(cfg)
    }

    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        workers: Option<usize>,
        out: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
    }

    /// Resolve a possibly-relative path against the output directory.
    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// Provenance line placed at the top of every output file.
    pub fn provenance(&self) -> String {
        format!("ratein v1 config_hash={:016x} seed={}", self.config_hash, self.seed)
    }

    fn base_checks(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.workers == 0 {
            return Err(CliError::config("workers must be >= 1"));
        }
        Ok(())
    }

    fn require_input(&self, file: &str, what: &str) -> Result<PathBuf, CliError> {
        let p = self.resolve(file);
        if !p.is_file() {
            return Err(CliError::config(format!(
                "{what} `{}` does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Check that the output directory can be created and written.
    fn check_out_writable(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::config(format!("cannot create output dir: {e}")))?;
        let probe = self.out_dir.join(".write_check");
        std::fs::write(&probe, b"ok")
            .map_err(|e| CliError::config(format!("output dir not writable: {e}")))?;
        let _ = std::fs::remove_file(&probe);
        Ok(())
    }

    pub fn validate_train(&self) -> Result<&TrainSection, CliError> {
        self.base_checks()?;
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| CliError::config("config has no [train] section"))?;
        if t.n == 0 {
            return Err(CliError::config("train.n must be >= 1"));
        }
        if t.sigma < 0.0 {
            return Err(CliError::config("train.sigma must be >= 0"));
        }
        if t.lr <= 0.0 {
            return Err(CliError::config("train.lr must be positive"));
        }
        if t.hidden.is_empty() || t.hidden.contains(&0) {
            return Err(CliError::config("train.hidden must be positive widths"));
        }
        if t.task == Task::Classification && t.classes < 2 {
            return Err(CliError::config("train.classes must be >= 2"));
        }
        self.check_out_writable()?;
        Ok(t)
    }

    pub fn validate_ratein(&self) -> Result<&RateinSection, CliError> {
        self.base_checks()?;
        let r = self
            .ratein
            .as_ref()
            .ok_or_else(|| CliError::config("config has no [ratein] section"))?;
        self.require_input(&r.model_file, "model file")?;
        if let Some(d) = &r.dataset_file {
            self.require_input(d, "dataset file")?;
        } else if r.n_instances == 0 {
            return Err(CliError::config("ratein.n_instances must be >= 1"));
        }
        r.ratein_config(0)?;
        self.check_out_writable()?;
        Ok(r)
    }

    pub fn validate_mc(&self) -> Result<&McSection, CliError> {
        self.base_checks()?;
        let m = self
            .mc
            .as_ref()
            .ok_or_else(|| CliError::config("config has no [mc] section"))?;
        self.require_input(&m.model_file, "model file")?;
        if let Some(d) = &m.dataset_file {
            self.require_input(d, "dataset file")?;
        } else if m.n_instances == 0 {
            return Err(CliError::config("mc.n_instances must be >= 1"));
        }
        if m.task == Task::Regression && m.t < 2 {
            return Err(CliError::config("mc.t must be >= 2 for interval summaries"));
        }
        if m.z <= 0.0 {
            return Err(CliError::config("mc.z must be positive"));
        }
        match &m.policy {
            PolicyConfig::Constant { p } | PolicyConfig::Scheduled { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(CliError::config(format!("policy rate {p} outside [0, 1)")));
                }
            }
            PolicyConfig::Activation { p_max, .. } => {
                if !(0.0..1.0).contains(p_max) {
                    return Err(CliError::config(format!(
                        "policy p_max {p_max} outside [0, 1)"
                    )));
                }
            }
            PolicyConfig::RateIn { reports_file } => {
                self.require_input(reports_file, "rate report file")?;
            }
        }
        self.check_out_writable()?;
        Ok(m)
    }

    pub fn validate_evaluate(&self) -> Result<&EvaluateSection, CliError> {
        self.base_checks()?;
        let e = self
            .evaluate
            .as_ref()
            .ok_or_else(|| CliError::config("config has no [evaluate] section"))?;
        self.require_input(&e.summaries_file, "summaries file")?;
        self.require_input(&e.dataset_file, "dataset file")?;
        if e.z <= 0.0 {
            return Err(CliError::config("evaluate.z must be positive"));
        }
        self.check_out_writable()?;
        Ok(e)
    }

    pub fn validate_experiment(&self) -> Result<ExperimentSection, CliError> {
        self.base_checks()?;
        let section = self
            .experiment
            .as_ref()
            .ok_or_else(|| CliError::config("config has no [experiment] section"))?;
        let mut section = section.clone();
        section.spec.seed = self.seed;
        section.spec.workers = self.workers;
        section.spec.out_dir = Some(self.out_dir.clone());
        section.spec.provenance = Some(self.provenance());
        section.spec.validate().map_err(CliError::from_config_err)?;
        self.check_out_writable()?;
        Ok(section)
    }
}

/// Summary rows as cmd_mc writes them and cmd_evaluate reads them back.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub instance_id: usize,
    pub x: f64,
    pub y_true: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn read_summaries_csv(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let body: String = content
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::runtime(format!("summaries parse: {e}")))?;
        if record.len() != 7 {
            return Err(CliError::runtime(format!(
                "summaries row has {} fields, expected 7",
                record.len()
            )));
        }
        let f = |i: usize| -> Result<f64, CliError> {
            record[i]
                .parse()
                .map_err(|_| CliError::runtime(format!("bad float `{}`", &record[i])))
        };
        rows.push(SummaryRow {
            instance_id: record[0]
                .parse()
                .map_err(|_| CliError::runtime("bad instance id".to_string()))?,
            x: f(1)?,
            y_true: f(2)?,
            mean: f(3)?,
            std: f(4)?,
            lower: f(5)?,
            upper: f(6)?,
        });
    }
    if rows.is_empty() {
        return Err(CliError::runtime("summaries file holds no rows".to_string()));
    }
    Ok(rows)
}
