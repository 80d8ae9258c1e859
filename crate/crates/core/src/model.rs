//! A small ReLU multilayer perceptron with hand-written backpropagation.
//!
//! Parameters live in one flat [`ParamVector`]: layers in forward order, each
//! contributing its `out × in` weight matrix (row-major) followed by its bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

/// One layer's parameters, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Row-major inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Vec<f64>,
    pub in_dim: usize,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Vec<f64>, in_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("batch must contain at least one sample"));
        }
        if in_dim == 0 || inputs.len() != labels.len() * in_dim {
            return Err(Error::invalid(format!(
                "batch has {} inputs for {} labels of width {in_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(LabeledBatch {
            inputs,
            in_dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            activation: Activation::Relu,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "an MLP needs at least input and output sizes",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// `Σ (in·out + out)` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn unflatten(&self, w: &ParamVector) -> Result<Vec<Layer>> {
        self.check_params(w)?;
        let mut offset = 0;
        let v = w.as_slice();
        Ok(self
            .layer_dims()
            .map(|(fan_in, fan_out)| {
                let nw = fan_in * fan_out;
                let weights = v[offset..offset + nw].to_vec();
                let bias = v[offset + nw..offset + nw + fan_out].to_vec();
                offset += nw + fan_out;
                Layer {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[Layer]) -> Result<ParamVector> {
        let dims: Vec<_> = self.layer_dims().collect();
        if layers.len() != dims.len() {
            return Err(Error::invalid("layer count does not match spec"));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (layer, (fan_in, fan_out)) in layers.iter().zip(dims) {
            if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
                return Err(Error::invalid("layer shape does not match spec"));
            }
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        ParamVector::new(out)
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        let d = self.param_count();
        if w.len() != d {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, spec {:?} needs {d}",
                w.len(),
                self.layer_sizes
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &[f64], in_dim: usize) -> Result<usize> {
        if in_dim != self.in_dim() {
            return Err(Error::invalid(format!(
                "input width {in_dim} does not match model input {}",
                self.in_dim()
            )));
        }
        if !inputs.len().is_multiple_of(in_dim) {
            return Err(Error::invalid("input buffer is not a whole number of rows"));
        }
        Ok(inputs.len() / in_dim)
    }
}

/// Glorot-uniform weights and zero biases, reproducible from `spec.seed`.
pub fn init_model(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(out)
}

/// Layer activations kept for the backward pass.
struct Trace {
    // acts[0] is the input; acts[l] is the post-ReLU output of hidden layer l.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * fan_out];
    for r in 0..rows {
        let xr = &x[r * fan_in..(r + 1) * fan_in];
        let orow = &mut out[r * fan_out..(r + 1) * fan_out];
        for o in 0..fan_out {
            let wo = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = b[o];
            for (wi, xi) in wo.iter().zip(xr) {
                acc += wi * xi;
            }
            orow[o] = acc;
        }
    }
    out
}

fn run_forward(w: &[f64], spec: &MlpSpec, inputs: &[f64], rows: usize) -> Trace {
    let dims: Vec<_> = spec.layer_dims().collect();
    let mut acts = vec![inputs.to_vec()];
    let mut offset = 0;
    let mut logits = Vec::new();
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let nw = fan_in * fan_out;
        let wl = &w[offset..offset + nw];
        let bl = &w[offset + nw..offset + nw + fan_out];
        offset += nw + fan_out;
        let mut z = affine(wl, bl, acts.last().unwrap(), rows, fan_in, fan_out);
        if l + 1 < dims.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(z);
        } else {
            logits = z;
        }
    }
    Trace { acts, logits }
}

/// Logits, row-major `rows × num_classes`.
pub fn forward(w: &ParamVector, spec: &MlpSpec, inputs: &[f64], in_dim: usize) -> Result<Vec<f64>> {
    spec.check_params(w)?;
    let rows = spec.check_inputs(inputs, in_dim)?;
    Ok(run_forward(w.as_slice(), spec, inputs, rows).logits)
}

/// Predicted class per row; ties go to the lowest index.
pub fn predict(
    w: &ParamVector,
    spec: &MlpSpec,
    inputs: &[f64],
    in_dim: usize,
) -> Result<Vec<usize>> {
    let logits = forward(w, spec, inputs, in_dim)?;
    let c = spec.num_classes();
    Ok(logits
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Mean softmax cross-entropy and its gradient.
pub fn ce_loss_and_grad(
    w: &ParamVector,
    spec: &MlpSpec,
    batch: &LabeledBatch,
) -> Result<(f64, ParamVector)> {
    spec.check_params(w)?;
    let rows = spec.check_inputs(&batch.inputs, batch.in_dim)?;
    if rows != batch.labels.len() || rows == 0 {
        return Err(Error::invalid("batch rows and labels disagree"));
    }
    let classes = spec.num_classes();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let wv = w.as_slice();
    let trace = run_forward(wv, spec, &batch.inputs, rows);

    // dL/dlogits = (softmax - onehot) / rows
    let inv_rows = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut delta = vec![0.0; rows * classes];
    for r in 0..rows {
        let row = &trace.logits[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        let y = batch.labels[r];
        loss += log_norm - row[y];
        let drow = &mut delta[r * classes..(r + 1) * classes];
        for (k, dv) in drow.iter_mut().enumerate() {
            let p = (row[k] - log_norm).exp();
            *dv = (p - if k == y { 1.0 } else { 0.0 }) * inv_rows;
        }
    }
    loss *= inv_rows;

    let dims: Vec<_> = spec.layer_dims().collect();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(fi, fo) in &dims {
        offsets.push(off);
        off += fi * fo + fo;
    }
    let mut grad = vec![0.0; wv.len()];
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let base = offsets[l];
        let x = &trace.acts[l];
        {
            let (gw, gb) =
                grad[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for r in 0..rows {
                let xr = &x[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = delta[r * fan_out + o];
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xr) {
                        *g += dv * xi;
                    }
                }
            }
        }
        if l > 0 {
            let wl = &wv[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; rows * fan_in];
            for r in 0..rows {
                let pr = &mut prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = delta[r * fan_out + o];
                    if dv == 0.0 {
                        continue;
                    }
                    for (p, wi) in pr.iter_mut().zip(&wl[o * fan_in..(o + 1) * fan_in]) {
                        *p += dv * wi;
                    }
                }
                // ReLU mask from the stored post-activation.
                for (p, a) in pr.iter_mut().zip(&x[r * fan_in..(r + 1) * fan_in]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            round: 0,
            detail: format!("cross-entropy evaluated to {loss} or produced a non-finite gradient"),
        });
    }
    Ok((loss, ParamVector::new(grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_and_zero_bias() {
        let spec = MlpSpec::new(vec![2, 3, 2], 42).unwrap();
        assert_eq!(spec.param_count(), 17);
        let w = init_model(&spec).unwrap();
        assert_eq!(w.len(), 17);
        for layer in spec.unflatten(&w).unwrap() {
            assert!(layer.bias.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::new(vec![4, 8, 3], 42).unwrap();
        assert_eq!(init_model(&spec).unwrap(), init_model(&spec).unwrap());
        let other = MlpSpec::new(vec![4, 8, 3], 43).unwrap();
        assert_ne!(init_model(&spec).unwrap(), init_model(&other).unwrap());
        let limit = (6.0f64 / 12.0).sqrt();
        let layers = spec.unflatten(&init_model(&spec).unwrap()).unwrap();
        assert!(layers[0].weights.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::new(vec![3], 0).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = MlpSpec::new(vec![3, 5, 4], 1).unwrap();
        let w = ParamVector::zeros(spec.param_count());
        let logits = forward(&w, &spec, &[1.0, -2.0, 3.0, 0.5, 0.5, 0.5], 3).unwrap();
        assert_eq!(logits, vec![0.0; 8]);
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new(vec![2, 2], 0).unwrap();
        let w = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&w, &spec, &[1.0, 2.0], 2).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn dimension_mismatches() {
        let spec = MlpSpec::new(vec![2, 2], 0).unwrap();
        let w = ParamVector::zeros(5);
        assert!(forward(&w, &spec, &[1.0, 2.0], 2).is_err());
        let w = ParamVector::zeros(6);
        assert!(forward(&w, &spec, &[1.0, 2.0, 3.0], 3).is_err());
        let batch = LabeledBatch::new(vec![1.0, 2.0], 2, vec![5]).unwrap();
        assert!(ce_loss_and_grad(&w, &spec, &batch).is_err());
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let spec = MlpSpec::new(vec![3, 4, 5], 0).unwrap();
        let w = ParamVector::zeros(spec.param_count());
        let batch = LabeledBatch::new(vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0], 3, vec![0, 4]).unwrap();
        let (loss, _) = ce_loss_and_grad(&w, &spec, &batch).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        let spec = MlpSpec::new(vec![2, 3], 0).unwrap();
        let w = ParamVector::zeros(spec.param_count());
        assert_eq!(predict(&w, &spec, &[1.0, 1.0], 2).unwrap(), vec![0]);
    }
}
