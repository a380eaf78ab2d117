use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Serializable architecture block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Input width, hidden widths, number of classes.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Two-parameter weight-shared model; `layer_widths` and `activation` must
    /// then match [`MlpModel::toy`].
    #[serde(default)]
    pub toy: bool,
    #[serde(default = "default_loss_cap")]
    pub loss_cap: f64,
}

fn default_loss_cap() -> f64 {
    MlpModel::DEFAULT_LOSS_CAP
}

/// Mean cross-entropy over a batch, raw and rescaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub raw: f64,
    /// Mean of `min(raw_i, cap) / cap` over samples.
    pub bounded: f64,
}

/// Which loss a gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Raw,
    Bounded,
}

/// Per-layer view of dense parameters. Weights are row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructuredParams {
    Dense(Vec<LayerParams>),
    /// The toy model: one weight scalar and one bias scalar shared by every layer.
    Shared { weight: f64, bias: f64 },
}

/// Coefficients mapping the two free toy parameters onto every dense slot.
#[derive(Debug, Clone, PartialEq)]
struct Sharing {
    /// `dense[k] = coef[k] * free[source[k]]`.
    coef: Vec<f64>,
    source: Vec<u8>,
}

/// Dense coefficients of the toy model in flat layout: weights then biases,
/// layer by layer. They are the weights of a dense net of the same shape
/// after 300 full-batch Adam(0.02) steps from `init_params(4)` on the default
/// mixture sample (n = 100, stream 0, median labels).
#[rustfmt::skip]
const TOY_COEFFICIENTS: [f64; 82] = [
    -0.32539206105628116, 3.0116071290144344, 3.675762971479789, 3.330433902351697,
    -0.893098993204189, -0.7997102563475404, 0.8581098552438478, -1.7569538788805814,
    -0.21577763836053526, 2.7400485199797933, -1.8191146583879867, 3.4659505951898666,
    1.8613860704685476, 2.9288846364635135, -0.08113648845649643, -1.8865679156904467,
    -4.141523908817069, 3.270995825677235, 3.8833875970266045, -3.2898491323891466,
    -0.9462201483455609, -3.857094357973869, -2.450989399708154, 2.042243880339245,
    -1.1578524798187126, 2.6549935892239427, 5.316126931079756, -4.125524137308637,
    -1.9394971301007682, 0.3827195539658925, 0.7999098233747618, -0.013921824064699988,
    -0.681666971913115, -5.117974523815575, 4.1050179955043005, -5.2469560224945475,
    -1.8874471816102552, -1.4234067652109164, 2.1592956228952094, -0.595563997095718,
    -3.230556829154774, -2.5429585501978513, 4.375954265390288, -4.20028015105801,
    0.6863675435359988, 4.63763012266065, -3.914135327028223, 4.564936836572661,
    2.142636776680087, -0.2532272080681042, 1.1105074328557698, -1.8377656225126693,
    3.5412488858242352, 0.5614543093968557, 3.3434819490285563, -3.8343568126115533,
    -2.373255106370139, -0.945949714730294, -3.669388724246399, 3.857514640777252,
    -3.377377338974391, -0.3611036725109101, -2.65646005771048, 3.0335789434801863,
    2.229538829503769, 0.8897536362155434, 4.114351066540652, -2.761375265780519,
    -1.0046003723181591, 0.7170087890961934, 0.837860908489735, -1.439676179894854,
    -2.4234495461500214, 2.7234400634219167, 1.2045157815918224, -0.09006713188344377,
    1.3499007954501263, -1.3133607269309084, -2.463863425897729, 1.209597601100691,
    0.7189288551053504, -0.7189288551053501,
];

/// Dense feed-forward classifier: hidden layers use `activation`, the last
/// layer emits logits for a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    widths: Vec<usize>,
    activation: Activation,
    loss_cap: f64,
    sharing: Option<Sharing>,
}

impl MlpModel {
    pub const DEFAULT_LOSS_CAP: f64 = 10.0;
    pub const TOY_WIDTHS: [usize; 6] = [2, 4, 4, 4, 4, 2];

    pub fn dense(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidModel(format!(
                "layer widths {widths:?} need at least an input and an output, all positive"
            )));
        }
        if widths[widths.len() - 1] < 2 {
            return Err(Error::InvalidModel("the classification head needs 2+ classes".into()));
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            loss_cap: Self::DEFAULT_LOSS_CAP,
            sharing: None,
        })
    }

    /// The two-parameter toy classifier: 5 sigmoid layers of width 4 on 2-D
    /// inputs. Every weight is `c_k * w1` and every bias `d_k * w2` for a fixed
    /// coefficient table, so `w = (1, 1)` reproduces a trained dense net and
    /// `w = 0` predicts uniformly.
    pub fn toy() -> Self {
        Self::toy_with_coefficients(&TOY_COEFFICIENTS).expect("toy table matches toy widths")
    }

    /// Toy model with a custom coefficient table in dense flat layout.
    pub fn toy_with_coefficients(coef: &[f64]) -> Result<Self> {
        let mut model = Self::dense(&Self::TOY_WIDTHS, Activation::Sigmoid)?;
        if coef.len() != model.dense_param_count() {
            return Err(Error::ParamCount {
                expected: model.dense_param_count(),
                got: coef.len(),
            });
        }
        let mut source = Vec::with_capacity(coef.len());
        for l in 0..model.num_layers() {
            let (fan_in, fan_out) = (model.widths[l], model.widths[l + 1]);
            source.extend(std::iter::repeat(0u8).take(fan_in * fan_out));
            source.extend(std::iter::repeat(1u8).take(fan_out));
        }
        model.sharing = Some(Sharing { coef: coef.to_vec(), source });
        Ok(model)
    }

    /// The toy coefficient table.
    pub fn toy_coefficients() -> &'static [f64] {
        &TOY_COEFFICIENTS
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut model = if spec.toy {
            let toy = Self::toy();
            if spec.layer_widths != toy.widths || spec.activation != toy.activation {
                return Err(Error::InvalidModel(format!(
                    "toy model is fixed at widths {:?} with sigmoid activation",
                    Self::TOY_WIDTHS
                )));
            }
            toy
        } else {
            Self::dense(&spec.layer_widths, spec.activation)?
        };
        model = model.with_loss_cap(spec.loss_cap)?;
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            layer_widths: self.widths.clone(),
            activation: self.activation,
            toy: self.is_toy(),
            loss_cap: self.loss_cap,
        }
    }

    pub fn with_loss_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::InvalidModel(format!("loss cap must be positive, got {cap}")));
        }
        self.loss_cap = cap;
        Ok(self)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn loss_cap(&self) -> f64 {
        self.loss_cap
    }

    pub fn is_toy(&self) -> bool {
        self.sharing.is_some()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    fn dense_param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Number of free parameters `m`.
    pub fn param_count(&self) -> usize {
        if self.is_toy() {
            2
        } else {
            self.dense_param_count()
        }
    }

    /// Weight offset and bias offset of layer `l` in the dense layout.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.widths[..l + 1]
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum();
        (start, start + self.widths[l] * self.widths[l + 1])
    }

    pub fn check_params(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::ParamCount {
                expected: self.param_count(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &SampleBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.dim() != self.input_dim() {
            return Err(Error::LayerWidth {
                layer: 0,
                expected: self.input_dim(),
                got: batch.dim(),
            });
        }
        if batch.classes() > self.classes() {
            return Err(Error::LayerWidth {
                layer: self.num_layers() - 1,
                expected: self.classes(),
                got: batch.classes(),
            });
        }
        Ok(())
    }

    fn expand<'a>(&self, w: &'a [f64]) -> Cow<'a, [f64]> {
        match &self.sharing {
            None => Cow::Borrowed(w),
            Some(s) => Cow::Owned(
                s.coef
                    .iter()
                    .zip(&s.source)
                    .map(|(c, &src)| c * w[src as usize])
                    .collect(),
            ),
        }
    }

    fn contract(&self, dense_grad: Vec<f64>) -> Vec<f64> {
        match &self.sharing {
            None => dense_grad,
            Some(s) => {
                let mut g = vec![0.0; 2];
                for ((c, &src), d) in s.coef.iter().zip(&s.source).zip(&dense_grad) {
                    g[src as usize] += c * d;
                }
                g
            }
        }
    }

    /// Deterministic initialization: Glorot-uniform weights and zero biases
    /// for dense models, `U(-1, 1)^2` for the toy model.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = stream_rng(seed, 0, Stream::Init, 0);
        if self.is_toy() {
            return ParamVector::from(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }
        let mut p = vec![0.0; self.param_count()];
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (wo, bo) = self.offsets(l);
            for x in &mut p[wo..bo] {
                *x = rng.random_range(-limit..limit);
            }
        }
        ParamVector::from(p)
    }

    pub fn unflatten(&self, w: &ParamVector) -> Result<StructuredParams> {
        self.check_params(w)?;
        if self.is_toy() {
            return Ok(StructuredParams::Shared {
                weight: w[0],
                bias: w[1],
            });
        }
        Ok(StructuredParams::Dense(
            (0..self.num_layers())
                .map(|l| {
                    let (wo, bo) = self.offsets(l);
                    let end = bo + self.widths[l + 1];
                    LayerParams {
                        weights: w[wo..bo].to_vec(),
                        biases: w[bo..end].to_vec(),
                    }
                })
                .collect(),
        ))
    }

    pub fn flatten(&self, params: &StructuredParams) -> Result<ParamVector> {
        match params {
            StructuredParams::Shared { weight, bias } if self.is_toy() => {
                Ok(ParamVector::from(vec![*weight, *bias]))
            }
            StructuredParams::Dense(layers) if !self.is_toy() => {
                if layers.len() != self.num_layers() {
                    return Err(Error::InvalidModel(format!(
                        "expected {} layers, got {}",
                        self.num_layers(),
                        layers.len()
                    )));
                }
                let mut out = Vec::with_capacity(self.param_count());
                for (l, layer) in layers.iter().enumerate() {
                    let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                    if layer.weights.len() != fan_in * fan_out || layer.biases.len() != fan_out {
                        return Err(Error::LayerWidth {
                            layer: l,
                            expected: fan_in * fan_out + fan_out,
                            got: layer.weights.len() + layer.biases.len(),
                        });
                    }
                    out.extend_from_slice(&layer.weights);
                    out.extend_from_slice(&layer.biases);
                }
                Ok(ParamVector::from(out))
            }
            _ => Err(Error::InvalidModel(
                "parameter structure does not match the model kind".into(),
            )),
        }
    }

    /// Class probabilities for one input.
    pub fn predict_proba(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(w)?;
        if x.len() != self.input_dim() {
            return Err(Error::LayerWidth {
                layer: 0,
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let dense = self.expand(w);
        let mut acts = Vec::new();
        self.forward_sample(&dense, x, &mut acts);
        let logits = &acts[self.num_layers()];
        let lse = log_sum_exp(logits);
        Ok(logits.iter().map(|z| (z - lse).exp()).collect())
    }

    fn forward_sample(&self, dense: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        let layers = self.num_layers();
        acts.resize(layers + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (wo, bo) = self.offsets(l);
            let (prev, rest) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for j in 0..fan_out {
                let row = &dense[wo + j * fan_in..wo + (j + 1) * fan_in];
                let z = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + dense[bo + j];
                out.push(if l + 1 < layers { self.activation.apply(z) } else { z });
            }
        }
    }

    /// Mean loss over `batch`, plus the gradient of the selected loss.
    pub fn evaluate(
        &self,
        w: &[f64],
        batch: &SampleBatch,
        grad: Option<LossMode>,
    ) -> Result<(LossValue, Option<Vec<f64>>)> {
        self.check_params(w)?;
        self.check_batch(batch)?;
        let dense = self.expand(w);
        let layers = self.num_layers();
        let n = batch.len() as f64;
        let cap = self.loss_cap;
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut dense_grad = grad.map(|_| vec![0.0; dense.len()]);
        let mut delta = Vec::new();
        let mut prev_delta = Vec::new();
        let (mut raw_sum, mut bounded_sum) = (0.0, 0.0);

        for i in 0..batch.len() {
            self.forward_sample(&dense, batch.row(i), &mut acts);
            let logits = &acts[layers];
            let y = batch.label(i);
            let lse = log_sum_exp(logits);
            let raw = lse - logits[y];
            raw_sum += raw;
            bounded_sum += raw.min(cap) / cap;

            let (Some(g), Some(mode)) = (dense_grad.as_mut(), grad) else {
                continue;
            };
            let scale = match mode {
                LossMode::Raw => 1.0 / n,
                LossMode::Bounded if raw < cap => 1.0 / (n * cap),
                LossMode::Bounded => continue,
            };
            delta.clear();
            delta.extend(logits.iter().enumerate().map(|(k, z)| {
                let p = (z - lse).exp();
                scale * (p - if k == y { 1.0 } else { 0.0 })
            }));
            for l in (0..layers).rev() {
                let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                let (wo, bo) = self.offsets(l);
                let input = &acts[l];
                for j in 0..fan_out {
                    let d = delta[j];
                    g[bo + j] += d;
                    let row = &mut g[wo + j * fan_in..wo + (j + 1) * fan_in];
                    for (gk, a) in row.iter_mut().zip(input) {
                        *gk += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                prev_delta.clear();
                prev_delta.extend((0..fan_in).map(|k| {
                    let back: f64 = (0..fan_out)
                        .map(|j| dense[wo + j * fan_in + k] * delta[j])
                        .sum();
                    back * self.activation.derivative_from_output(input[k])
                }));
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }

        let loss = LossValue {
            raw: raw_sum / n,
            bounded: bounded_sum / n,
        };
        Ok((loss, dense_grad.map(|g| self.contract(g))))
    }

    /// Misclassification rate (argmax of the logits).
    pub fn error_rate(&self, w: &[f64], batch: &SampleBatch) -> Result<f64> {
        self.check_params(w)?;
        self.check_batch(batch)?;
        let dense = self.expand(w);
        let mut acts = Vec::new();
        let mut wrong = 0usize;
        for i in 0..batch.len() {
            self.forward_sample(&dense, batch.row(i), &mut acts);
            let logits = &acts[self.num_layers()];
            let arg = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            wrong += usize::from(arg != batch.label(i));
        }
        Ok(wrong as f64 / batch.len() as f64)
    }

    /// `(alpha * W1, alpha * b1, W2 / alpha, b2)` for a two-layer ReLU network.
    ///
    /// Positive homogeneity of the ReLU makes the network function, and so
    /// the loss, invariant under this map.
    pub fn reparameterize(&self, w: &ParamVector, alpha: f64) -> Result<ParamVector> {
        if self.is_toy() || self.num_layers() != 2 || self.activation != Activation::Relu {
            return Err(Error::InvalidModel(
                "re-parameterization needs a two-layer relu network".into(),
            ));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        self.check_params(w)?;
        let (second, second_bias) = self.offsets(1);
        let mut out = w.clone();
        for (k, x) in out.iter_mut().enumerate() {
            if k < second {
                *x *= alpha;
            } else if k < second_bias {
                *x /= alpha;
            }
        }
        Ok(out)
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
