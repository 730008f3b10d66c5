//! Dense feed-forward network with a softmax head, hand-written backward pass,
//! Adam, and a central-difference gradient oracle.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine map `W x + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.rows() {
                return Err(Error::invalid(format!(
                    "bias length {} does not match layer output {}",
                    b.len(),
                    weights.rows()
                )));
            }
        }
        Ok(Layer { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Hidden layers use `activation`; the last layer emits raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Intermediate values kept by [`MlpModel::forward_cached`] for the backward pass.
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        let finite = layers.iter().all(|l| {
            l.weights.is_finite()
                && l.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
        });
        if !finite {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(MlpModel { layers, activation })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        activation: Activation,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(num_classes))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..=limit))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("shape"),
                    bias: bias.then(|| vec![0.0; fan_out]),
                }
            })
            .collect();
        MlpModel::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// All parameters in canonical order: per layer, weights row-major then bias.
    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.parameter_slices().concat()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut offset = 0;
        for s in self.parameter_slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits `h(x)` for every row of `x` (n×C).
    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Softmax posteriors for every row of `x`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut logits = self.forward_logits(x)?;
        for r in 0..logits.rows() {
            let p = softmax(logits.row(r))?;
            logits.row_mut(r).copy_from_slice(&p);
        }
        Ok(logits)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut current = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &current);
            if li == last {
                inputs.push(current);
                return Ok(ForwardCache {
                    inputs,
                    pre_activations,
                    logits: z,
                });
            }
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
            inputs.push(std::mem::replace(&mut current, a));
            pre_activations.push(z);
        }
        unreachable!("model has at least one layer")
    }

    /// Backpropagates `dlogits` (n×C, already scaled by the caller) to parameters.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> GradientBundle {
        let mut grads: Vec<LayerGradient> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.inputs[li];
            let mut dw = Matrix::zeros(layer.output_dim(), layer.input_dim());
            let mut db = layer.bias.as_ref().map(|b| vec![0.0; b.len()]);
            for n in 0..delta.rows() {
                let d = delta.row(n);
                let a = input.row(n);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (w, &av) in dw.row_mut(o).iter_mut().zip(a) {
                        *w += dv * av;
                    }
                }
                if let Some(db) = db.as_mut() {
                    for (b, &dv) in db.iter_mut().zip(d) {
                        *b += dv;
                    }
                }
            }
            if li > 0 {
                let z = &cache.pre_activations[li - 1];
                let mut next = Matrix::zeros(delta.rows(), layer.input_dim());
                for n in 0..delta.rows() {
                    let row = next.row_mut(n);
                    for (o, &dv) in delta.row(n).iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (r, &w) in row.iter_mut().zip(layer.weights.row(o)) {
                            *r += dv * w;
                        }
                    }
                    for (r, &zv) in row.iter_mut().zip(z.row(n)) {
                        *r *= self.activation.derivative(zv);
                    }
                }
                delta = next;
            }
            grads.push(LayerGradient {
                weights: dw,
                bias: db,
            });
        }
        grads.reverse();
        GradientBundle {
            layers: grads,
            logits: Some(dlogits.clone()),
        }
    }

    /// Per-layer Frobenius norms of the weight matrices (biases excluded).
    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.weights.frobenius_norm()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    /// Text checkpoint; see `docs/formats.md` for the layout.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mns-model 1");
        let _ = writeln!(s, "activation {}", self.activation.name());
        let _ = writeln!(s, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(
                s,
                "layer {} {} {}",
                l.output_dim(),
                l.input_dim(),
                if l.bias.is_some() { "bias" } else { "nobias" }
            );
            for r in 0..l.weights.rows() {
                write_floats(&mut s, l.weights.row(r));
            }
            if let Some(b) = &l.bias {
                write_floats(&mut s, b);
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::Parse(format!("checkpoint truncated: expected {what}")))
        };
        let (ln, header) = next("header")?;
        if header.trim() != "mns-model 1" {
            return Err(Error::Parse(format!("line {ln}: unrecognized header `{header}`")));
        }
        let (ln, act) = next("activation")?;
        let activation = match act.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["activation", name] => Activation::from_name(name)?,
            _ => return Err(Error::Parse(format!("line {ln}: expected `activation <name>`"))),
        };
        let (ln, count) = next("layer count")?;
        let count: usize = match count.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["layers", n] => n
                .parse()
                .map_err(|_| Error::Parse(format!("line {ln}: bad layer count")))?,
            _ => return Err(Error::Parse(format!("line {ln}: expected `layers <n>`"))),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, spec) = next("layer header")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let (out, inp, has_bias) = match parts.as_slice() {
                ["layer", o, i, b] => (
                    o.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("line {ln}: bad output width")))?,
                    i.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("line {ln}: bad input width")))?,
                    match *b {
                        "bias" => true,
                        "nobias" => false,
                        _ => return Err(Error::Parse(format!("line {ln}: bad bias flag"))),
                    },
                ),
                _ => return Err(Error::Parse(format!("line {ln}: expected layer header"))),
            };
            let mut data = Vec::with_capacity(out * inp);
            for _ in 0..out {
                let (ln, row) = next("weight row")?;
                data.extend(parse_floats(row, inp, ln)?);
            }
            let bias = if has_bias {
                let (ln, row) = next("bias row")?;
                Some(parse_floats(row, out, ln)?)
            } else {
                None
            };
            layers.push(Layer::new(Matrix::from_vec(out, inp, data)?, bias)?);
        }
        MlpModel::new(layers, activation)
    }
}

fn affine(layer: &Layer, x: &Matrix) -> Matrix {
    let mut z = Matrix::zeros(x.rows(), layer.output_dim());
    for n in 0..x.rows() {
        let xin = x.row(n);
        let out = z.row_mut(n);
        for (o, v) in out.iter_mut().enumerate() {
            *v = crate::matrix::dot(layer.weights.row(o), xin);
            if let Some(b) = &layer.bias {
                *v += b[o];
            }
        }
    }
    z
}

pub(crate) fn write_floats(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        // Display for f64 is the shortest string that round-trips exactly.
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

pub(crate) fn parse_floats(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line_no}: bad number `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(Error::Parse(format!(
            "line {line_no}: expected {expected} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input must be finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
}

/// Gradients mirroring an [`MlpModel`]'s parameter shapes, plus the logit
/// gradients `∂L/∂h` they were propagated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGradient>,
    pub logits: Option<Matrix>,
}

impl GradientBundle {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradientBundle {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
            logits: None,
        }
    }

    /// Same canonical order as [`MlpModel::parameter_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn matches_shape(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, l)| {
                g.weights.rows() == l.weights.rows()
                    && g.weights.cols() == l.weights.cols()
                    && g.bias.as_ref().map(Vec::len) == l.bias.as_ref().map(Vec::len)
            })
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` epochs; 0 disables.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_every: 10,
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    /// Step-decayed learning rate for a zero-based epoch index.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.learning_rate;
        }
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.decay_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("Adam hyper-parameters out of range"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: GradientBundle,
    pub second_moment: GradientBundle,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: &AdamConfig) -> Self {
        AdamState {
            first_moment: GradientBundle::zeros_like(model),
            second_moment: GradientBundle::zeros_like(model),
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(model: &mut MlpModel, grads: &GradientBundle, state: &mut AdamState) -> Result<()> {
    if !grads.matches_shape(model)
        || !state.first_moment.matches_shape(model)
        || !state.second_moment.matches_shape(model)
    {
        return Err(Error::invalid("gradient or optimizer state shape does not match model"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let params = model.parameter_slices_mut();
    let g = grads.slices();
    let m = state.first_moment.slices_mut();
    let v = state.second_moment.slices_mut();
    for (((p, g), m), v) in params.into_iter().zip(g).zip(m).zip(v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Central differences with per-parameter step `h * max(1, |w|)`.
pub fn finite_diff_gradient<F>(loss_fn: F, model: &MlpModel, h: f64) -> Result<GradientBundle>
where
    F: Fn(&MlpModel) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let base = model.parameters();
    let mut probe = model.clone();
    let mut flat = vec![0.0; base.len()];
    let mut params = base.clone();
    for i in 0..base.len() {
        let step = h * base[i].abs().max(1.0);
        params[i] = base[i] + step;
        probe.set_parameters(&params)?;
        let plus = loss_fn(&probe);
        params[i] = base[i] - step;
        probe.set_parameters(&params)?;
        let minus = loss_fn(&probe);
        params[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteProbe { index: i });
        }
        flat[i] = (plus - minus) / (2.0 * step);
    }
    let mut out = GradientBundle::zeros_like(model);
    let mut offset = 0;
    for s in out.slices_mut() {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    }
    Ok(out)
}
