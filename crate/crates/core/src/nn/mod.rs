//! Minimal dense network engine.
//!
//! Networks are stacks of dense, ReLU, and named dropout-site layers.
//! Dropout uses the inverted convention: surviving activations are scaled
//! by `1/(1-p)` at drop time, so a rate of zero is exactly the identity and
//! no rescaling is needed at evaluation time. Masks are Bernoulli draws from
//! a ChaCha8 stream derived from `(mask_seed, site_id)`, which makes every
//! forward pass replayable.
//!
//! Networks are immutable after training; `forward` takes `&self` and is
//! safe to call concurrently.

mod persist;
mod train;

pub use train::{
    ce_loss, ce_loss_grads, mse_loss, mse_loss_grads, train_classifier,
    train_classifier_history, train_regression, train_regression_history, DenseGrads,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    DropoutSite,
}

/// One layer of the architecture. Dimension compatibility between
/// consecutive layers is validated when the network is built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Present exactly for dropout sites; unique within a network.
    pub site_id: Option<String>,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
            site_id: None,
        }
    }

    pub fn relu(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
            site_id: None,
        }
    }

    pub fn dropout_site(dim: usize, site_id: impl Into<String>) -> Self {
        LayerSpec {
            kind: LayerKind::DropoutSite,
            in_dim: dim,
            out_dim: dim,
            site_id: Some(site_id.into()),
        }
    }
}

/// Weights of one dense layer: row-major `out_dim x in_dim` matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Pre/post activation record captured at one dropout site during a forward
/// pass. `post = pre * mask / (1 - rate)` elementwise.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub site_id: String,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub mask: Vec<bool>,
    pub rate: f64,
}

/// Per-site dropout rates for one forward pass.
pub type RateMap = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    dense: Vec<DenseParams>,
    rng_seed: u64,
}

impl Network {
    /// Build a network with seeded fan-in-scaled uniform initial weights.
    pub fn new(layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        validate_arch(&layers)?;
        let mut dense = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            if l.kind == LayerKind::Dense {
                let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(rng_seed, i as u64));
                let bound = (6.0 / l.in_dim as f64).sqrt();
                let weights = (0..l.in_dim * l.out_dim)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                    .collect();
                let b_bound = 1.0 / (l.in_dim as f64).sqrt();
                let bias = (0..l.out_dim)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * b_bound)
                    .collect();
                dense.push(DenseParams {
                    weights,
                    bias,
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                });
            }
        }
        Ok(Network {
            layers,
            dense,
            rng_seed,
        })
    }

    /// The regression architecture used by the bundled experiments:
    /// 1 -> 50 -> 50 -> 1 with ReLU activations and a dropout site after
    /// each hidden ReLU.
    pub fn regression_arch() -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(1, 50),
            LayerSpec::relu(50),
            LayerSpec::dropout_site(50, "drop1"),
            LayerSpec::dense(50, 50),
            LayerSpec::relu(50),
            LayerSpec::dropout_site(50, "drop2"),
            LayerSpec::dense(50, 1),
        ]
    }

    /// Dense classifier over `in_dim` features with the given hidden widths,
    /// ReLU activations, a dropout site after each hidden ReLU, and
    /// `classes` output logits.
    pub fn classifier_arch(in_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LayerSpec::dense(prev, h));
            layers.push(LayerSpec::relu(h));
            layers.push(LayerSpec::dropout_site(h, format!("drop{}", i + 1)));
            prev = h;
        }
        layers.push(LayerSpec::dense(prev, classes));
        layers
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    /// Dropout-site ids in forward order.
    pub fn site_ids(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| l.site_id.clone())
            .collect()
    }

    /// All-zero rate map over this network's sites.
    pub fn zero_rates(&self) -> RateMap {
        self.site_ids().into_iter().map(|s| (s, 0.0)).collect()
    }

    /// Uniform rate map over this network's sites.
    pub fn uniform_rates(&self, p: f64) -> RateMap {
        self.site_ids().into_iter().map(|s| (s, p)).collect()
    }

    pub fn dense_params(&self) -> &[DenseParams] {
        &self.dense
    }

    /// Mutable access to the dense parameters, used by training, persistence,
    /// and finite-difference checks.
    pub fn dense_params_mut(&mut self) -> &mut [DenseParams] {
        &mut self.dense
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerSpec>,
        dense: Vec<DenseParams>,
        rng_seed: u64,
    ) -> Result<Self> {
        validate_arch(&layers)?;
        let expected = layers
            .iter()
            .filter(|l| l.kind == LayerKind::Dense)
            .count();
        if dense.len() != expected {
            return Err(Error::ModelFormat(format!(
                "have {} dense parameter blocks, architecture needs {expected}",
                dense.len()
            )));
        }
        for (p, l) in dense
            .iter()
            .zip(layers.iter().filter(|l| l.kind == LayerKind::Dense))
        {
            if p.in_dim != l.in_dim || p.out_dim != l.out_dim {
                return Err(Error::ModelFormat(format!(
                    "dense parameters {}x{} do not match layer {}x{}",
                    p.out_dim, p.in_dim, l.out_dim, l.in_dim
                )));
            }
            if p.weights.len() != p.in_dim * p.out_dim || p.bias.len() != p.out_dim {
                return Err(Error::ModelFormat("weight block length mismatch".into()));
            }
        }
        Ok(Network {
            layers,
            dense,
            rng_seed,
        })
    }

    /// Forward pass with per-site dropout rates. Returns the prediction and
    /// one activation trace per dropout site, in forward order.
    ///
    /// Each site's mask stream derives from `(mask_seed, site_id)`; identical
    /// `(weights, x, rates, mask_seed)` give bit-identical results.
    pub fn forward(
        &self,
        x: &[f64],
        rates: &RateMap,
        mask_seed: u64,
    ) -> Result<(Vec<f64>, Vec<ActivationTrace>)> {
        let site_seeds = self.derive_site_seeds(mask_seed);
        self.forward_with_site_seeds(x, rates, &site_seeds)
    }

    /// Default per-site mask seeds for a given pass seed.
    pub fn derive_site_seeds(&self, mask_seed: u64) -> BTreeMap<String, u64> {
        self.site_ids()
            .into_iter()
            .map(|id| {
                let tag = seed::fnv1a(id.as_bytes());
                (id, seed::mix(mask_seed, tag))
            })
            .collect()
    }

    /// Forward pass with an explicit mask seed per dropout site. Used by the
    /// rate-adaptation loop, which freezes already-finalized sites while
    /// resampling the site under adjustment.
    pub fn forward_with_site_seeds(
        &self,
        x: &[f64],
        rates: &RateMap,
        site_seeds: &BTreeMap<String, u64>,
    ) -> Result<(Vec<f64>, Vec<ActivationTrace>)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "forward input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        for id in self.site_ids() {
            match rates.get(&id) {
                None => return Err(Error::UnknownSite(id)),
                Some(&r) if !(0.0..1.0).contains(&r) => return Err(Error::InvalidRate(r)),
                _ => {}
            }
        }

        let mut h = x.to_vec();
        let mut traces = Vec::new();
        let mut dense_idx = 0usize;
        for l in &self.layers {
            match l.kind {
                LayerKind::Dense => {
                    h = self.dense[dense_idx].apply(&h);
                    dense_idx += 1;
                }
                LayerKind::Relu => {
                    for v in &mut h {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                LayerKind::DropoutSite => {
                    let id = l.site_id.as_ref().expect("site id");
                    let rate = rates[id];
                    let mask_seed = site_seeds
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::UnknownSite(id.clone()))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
                    let pre = h.clone();
                    let scale = 1.0 / (1.0 - rate);
                    let mut mask = Vec::with_capacity(h.len());
                    for v in &mut h {
                        let keep = rng.random::<f64>() >= rate;
                        mask.push(keep);
                        *v = if keep { *v * scale } else { 0.0 };
                    }
                    traces.push(ActivationTrace {
                        site_id: id.clone(),
                        pre,
                        post: h.clone(),
                        mask,
                        rate,
                    });
                }
            }
        }
        Ok((h, traces))
    }

    /// Deterministic forward with all dropout disabled.
    pub fn forward_clean(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<ActivationTrace>)> {
        self.forward(x, &self.zero_rates(), 0)
    }
}

impl DenseParams {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
        out
    }
}

fn validate_arch(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("architecture must have at least one layer"));
    }
    let mut sites = std::collections::BTreeSet::new();
    let mut prev_out = layers[0].in_dim;
    for l in layers {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if l.in_dim != prev_out {
            return Err(Error::ShapeMismatch {
                context: "consecutive layer dims",
                expected: prev_out,
                got: l.in_dim,
            });
        }
        match l.kind {
            LayerKind::Dense => {}
            LayerKind::Relu | LayerKind::DropoutSite => {
                if l.in_dim != l.out_dim {
                    return Err(Error::config(
                        "relu and dropout layers must preserve dimension",
                    ));
                }
            }
        }
        if l.kind == LayerKind::DropoutSite {
            let id = l
                .site_id
                .as_ref()
                .ok_or_else(|| Error::config("dropout site needs an id"))?;
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(Error::config("site ids must be non-empty without whitespace"));
            }
            if !sites.insert(id.clone()) {
                return Err(Error::config(format!("duplicate site id `{id}`")));
            }
        } else if l.site_id.is_some() {
            return Err(Error::config("only dropout layers carry site ids"));
        }
        prev_out = l.out_dim;
    }
    Ok(())
}
