//! Gradient-based training: full-batch backpropagation with Adam.
//!
//! Dropout sites are inert during training (rates are applied only at
//! inference), so gradients flow through them unchanged.

use super::{LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Gradient block for one dense layer, same layout as [`super::DenseParams`].
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean-squared-error loss of the no-dropout forward pass over a batch.
pub fn mse_loss(net: &Network, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    Ok(mse_loss_grads(net, xs, ys)?.0)
}

/// MSE loss together with its gradients w.r.t. every dense parameter.
pub fn mse_loss_grads(net: &Network, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, Vec<DenseGrads>)> {
    check_batch(xs.len(), ys.len())?;
    if net.output_dim() != 1 {
        return Err(Error::config("regression loss expects a single output"));
    }
    let n = xs.len() as f64;
    let mut grads = zero_grads(net);
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let cache = forward_cache(net, x)?;
        let pred = cache.last().expect("output")[0];
        let resid = pred - y;
        loss += resid * resid / n;
        let delta_out = vec![2.0 * resid / n];
        backward(net, &cache, delta_out, &mut grads);
    }
    Ok((loss, grads))
}

/// Softmax cross-entropy loss over integer labels.
pub fn ce_loss(net: &Network, xs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(ce_loss_grads(net, xs, labels)?.0)
}

/// Cross-entropy loss together with gradients w.r.t. every dense parameter.
pub fn ce_loss_grads(
    net: &Network,
    xs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<DenseGrads>)> {
    check_batch(xs.len(), labels.len())?;
    let classes = net.output_dim();
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    let n = xs.len() as f64;
    let mut grads = zero_grads(net);
    let mut loss = 0.0;
    for (x, &label) in xs.iter().zip(labels) {
        let cache = forward_cache(net, x)?;
        let logits = cache.last().expect("output");
        let probs = softmax(logits);
        loss += -probs[label].max(f64::MIN_POSITIVE).ln() / n;
        let mut delta_out = probs;
        delta_out[label] -= 1.0;
        for d in &mut delta_out {
            *d /= n;
        }
        backward(net, &cache, delta_out, &mut grads);
    }
    Ok((loss, grads))
}

/// Train a regression network with Adam on MSE loss; full batch per epoch.
pub fn train_regression(
    xs: &[Vec<f64>],
    ys: &[f64],
    arch: Vec<LayerSpec>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Network> {
    Ok(train_regression_history(xs, ys, arch, epochs, lr, seed)?.0)
}

/// As [`train_regression`], also returning the per-epoch loss curve.
pub fn train_regression_history(
    xs: &[Vec<f64>],
    ys: &[f64],
    arch: Vec<LayerSpec>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    check_batch(xs.len(), ys.len())?;
    if arch.last().map(|l| l.out_dim) != Some(1) {
        return Err(Error::config("regression architecture must end in out_dim 1"));
    }
    let mut net = Network::new(arch, seed)?;
    let history = fit(&mut net, epochs, lr, |net| mse_loss_grads(net, xs, ys))?;
    Ok((net, history))
}

/// Train a classifier with Adam on softmax cross-entropy; the returned
/// network outputs logits.
pub fn train_classifier(
    xs: &[Vec<f64>],
    labels: &[usize],
    arch: Vec<LayerSpec>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Network> {
    Ok(train_classifier_history(xs, labels, arch, epochs, lr, seed)?.0)
}

/// As [`train_classifier`], also returning the per-epoch loss curve.
pub fn train_classifier_history(
    xs: &[Vec<f64>],
    labels: &[usize],
    arch: Vec<LayerSpec>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    check_batch(xs.len(), labels.len())?;
    let classes = arch.last().map(|l| l.out_dim).unwrap_or(0);
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    let mut net = Network::new(arch, seed)?;
    let history = fit(&mut net, epochs, lr, |net| ce_loss_grads(net, xs, labels))?;
    Ok((net, history))
}

fn fit<F>(net: &mut Network, epochs: usize, lr: f64, mut loss_grads: F) -> Result<Vec<f64>>
where
    F: FnMut(&Network) -> Result<(f64, Vec<DenseGrads>)>,
{
    if lr <= 0.0 {
        return Err(Error::config("learning rate must be positive"));
    }
    let mut m = zero_grads(net);
    let mut v = zero_grads(net);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, grads) = loss_grads(net)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(loss);
        let t = (epoch + 1) as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (li, g) in grads.iter().enumerate() {
            let params = &mut net.dense_params_mut()[li];
            adam_update(&mut params.weights, &g.weights, &mut m[li].weights, &mut v[li].weights, lr, bc1, bc2);
            adam_update(&mut params.bias, &g.bias, &mut m[li].bias, &mut v[li].bias, lr, bc1, bc2);
        }
    }
    Ok(history)
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for (((p, &g), m_i), v_i) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m_i = ADAM_BETA1 * *m_i + (1.0 - ADAM_BETA1) * g;
        *v_i = ADAM_BETA2 * *v_i + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m_i / bc1;
        let v_hat = *v_i / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Activations entering each layer, plus the network output at the end.
fn forward_cache(net: &Network, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() != net.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "training input",
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let mut acts = vec![x.to_vec()];
    let mut dense_idx = 0usize;
    for l in net.layers() {
        let h = acts.last().expect("activation");
        let next = match l.kind {
            LayerKind::Dense => {
                let out = net.dense_params()[dense_idx].apply(h);
                dense_idx += 1;
                out
            }
            LayerKind::Relu => h.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::DropoutSite => h.clone(),
        };
        acts.push(next);
    }
    Ok(acts)
}

/// Accumulate parameter gradients for one sample: `delta` is dL/d(output).
#[allow(clippy::needless_range_loop)]
fn backward(net: &Network, cache: &[Vec<f64>], mut delta: Vec<f64>, grads: &mut [DenseGrads]) {
    let mut dense_idx = net.dense_params().len();
    for (li, l) in net.layers().iter().enumerate().rev() {
        let input = &cache[li];
        match l.kind {
            LayerKind::Dense => {
                dense_idx -= 1;
                let p = &net.dense_params()[dense_idx];
                let g = &mut grads[dense_idx];
                let mut delta_in = vec![0.0; l.in_dim];
                for r in 0..l.out_dim {
                    g.bias[r] += delta[r];
                    let row = r * l.in_dim;
                    for c in 0..l.in_dim {
                        g.weights[row + c] += delta[r] * input[c];
                        delta_in[c] += p.weights[row + c] * delta[r];
                    }
                }
                delta = delta_in;
            }
            LayerKind::Relu => {
                for (d, &v) in delta.iter_mut().zip(input) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            LayerKind::DropoutSite => {}
        }
    }
}

fn zero_grads(net: &Network) -> Vec<DenseGrads> {
    net.dense_params()
        .iter()
        .map(|p| DenseGrads {
            weights: vec![0.0; p.weights.len()],
            bias: vec![0.0; p.bias.len()],
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_batch(nx: usize, ny: usize) -> Result<()> {
    if nx == 0 {
        return Err(Error::config("training data must be nonempty"));
    }
    if nx != ny {
        return Err(Error::ShapeMismatch {
            context: "training batch",
            expected: nx,
            got: ny,
        });
    }
    Ok(())
}
