//! GCN and GAT classifiers: layer specifications, forward computation, a
//! full-batch Adam trainer and the JSON model format.

mod forward;
mod train;

pub use forward::{attention_matrix, layer_forward, model_forward, model_logits, predict};
pub(crate) use forward::{argmax, attention_from_scores, forward_with, gat_scores, leaky_relu, maxpool_indices};
pub use train::{
    accuracy, adam_step, loss_and_gradient, parameters, set_parameters, train, AdamState,
    EpochRecord, TrainConfig,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::io as io_util;
use crate::datasets::Task;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    GcnConv,
    GatAttn,
    FullyConnected,
    Relu,
    Maxpool,
    SoftmaxOut,
}

impl LayerKind {
    pub fn is_linear(self) -> bool {
        matches!(self, LayerKind::GcnConv | LayerKind::GatAttn | LayerKind::FullyConnected)
    }

    pub fn passes_messages(self) -> bool {
        matches!(self, LayerKind::GcnConv | LayerKind::GatAttn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    /// Per head: `out_dim / heads` source coefficients followed by as many
    /// neighbor coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaky_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl LayerSpec {
    fn plain(kind: LayerKind, dim: usize) -> Self {
        LayerSpec {
            kind,
            in_dim: dim,
            out_dim: dim,
            weight: None,
            bias: None,
            attn_vector: None,
            leaky_slope: None,
            heads: None,
        }
    }

    pub fn relu(dim: usize) -> Self {
        LayerSpec::plain(LayerKind::Relu, dim)
    }

    pub fn maxpool(dim: usize) -> Self {
        LayerSpec::plain(LayerKind::Maxpool, dim)
    }

    pub fn softmax_out(n_classes: usize) -> Self {
        LayerSpec::plain(LayerKind::SoftmaxOut, n_classes)
    }

    pub fn gcn(weight: Matrix, bias: Option<Vec<f64>>) -> Self {
        LayerSpec::linear(LayerKind::GcnConv, weight, bias)
    }

    pub fn fc(weight: Matrix, bias: Option<Vec<f64>>) -> Self {
        LayerSpec::linear(LayerKind::FullyConnected, weight, bias)
    }

    pub fn gat(weight: Matrix, bias: Option<Vec<f64>>, attn_vector: Vec<f64>, heads: usize) -> Self {
        let mut l = LayerSpec::linear(LayerKind::GatAttn, weight, bias);
        l.attn_vector = Some(attn_vector);
        l.leaky_slope = Some(DEFAULT_LEAKY_SLOPE);
        l.heads = Some(heads);
        l
    }

    fn linear(kind: LayerKind, weight: Matrix, bias: Option<Vec<f64>>) -> Self {
        LayerSpec {
            kind,
            in_dim: weight.rows(),
            out_dim: weight.cols(),
            weight: Some(weight),
            bias,
            attn_vector: None,
            leaky_slope: None,
            heads: None,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads.unwrap_or(1)
    }

    pub fn head_dim(&self) -> usize {
        self.out_dim / self.heads()
    }

    pub fn slope(&self) -> f64 {
        self.leaky_slope.unwrap_or(DEFAULT_LEAKY_SLOPE)
    }

    pub(crate) fn weight(&self) -> &Matrix {
        self.weight.as_ref().expect("validated linear layer has a weight")
    }

    pub(crate) fn attn_src(&self, head: usize) -> &[f64] {
        let d = self.head_dim();
        &self.attn_vector.as_ref().expect("validated attention layer")[2 * head * d..(2 * head + 1) * d]
    }

    pub(crate) fn attn_dst(&self, head: usize) -> &[f64] {
        let d = self.head_dim();
        &self.attn_vector.as_ref().expect("validated attention layer")[(2 * head + 1) * d..(2 * head + 2) * d]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("{:?} layer: {msg}", self.kind)));
        match (&self.weight, self.kind.is_linear()) {
            (None, true) => return bad("missing weight".into()),
            (Some(_), false) => return bad("unexpected weight".into()),
            (Some(w), true) if w.shape() != (self.in_dim, self.out_dim) => {
                return bad(format!(
                    "weight shape {:?} does not match ({}, {})",
                    w.shape(),
                    self.in_dim,
                    self.out_dim
                ))
            }
            (Some(w), true) if !w.is_finite() => return bad("weight has non-finite entries".into()),
            _ => {}
        }
        if !self.kind.is_linear() && self.in_dim != self.out_dim {
            return bad(format!("in_dim {} differs from out_dim {}", self.in_dim, self.out_dim));
        }
        match &self.bias {
            Some(_) if !self.kind.is_linear() => return bad("unexpected bias".into()),
            Some(b) if b.len() != self.out_dim => {
                return bad(format!("bias length {} does not equal out_dim {}", b.len(), self.out_dim))
            }
            Some(b) if b.iter().any(|v| !v.is_finite()) => return bad("bias has non-finite entries".into()),
            _ => {}
        }
        let is_gat = self.kind == LayerKind::GatAttn;
        if !is_gat && (self.attn_vector.is_some() || self.leaky_slope.is_some() || self.heads.is_some()) {
            return bad("attention parameters on a non-attention layer".into());
        }
        if is_gat {
            let heads = self.heads();
            if heads == 0 || !self.out_dim.is_multiple_of(heads) {
                return bad(format!("{heads} heads do not divide out_dim {}", self.out_dim));
            }
            match &self.attn_vector {
                None => return bad("missing attn_vector".into()),
                Some(a) if a.len() != 2 * self.out_dim => {
                    return bad(format!("attn_vector length {} does not equal 2 x {}", a.len(), self.out_dim))
                }
                _ => {}
            }
            if !self.slope().is_finite() {
                return bad("leaky_slope must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub task: Task,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn new(task: Task, n_classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let m = TrainedModel {
            task,
            n_classes,
            layers,
            history: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    /// Number of message-passing layers, i.e. the receptive-field radius.
    pub fn message_passing_depth(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.passes_messages()).count()
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::Validation("model has no layers".into()))?;
        if last.kind != LayerKind::SoftmaxOut || last.out_dim != self.n_classes {
            return Err(Error::Validation(format!(
                "final layer must be softmax-out over {} classes",
                self.n_classes
            )));
        }
        for (k, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| Error::Validation(format!("layer {k}: {e}")))?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Validation(format!(
                    "layer {k} outputs {} features but layer {} expects {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        let pools = self.layers.iter().filter(|l| l.kind == LayerKind::Maxpool).count();
        let pool_ok = match self.task {
            Task::Node => pools == 0,
            Task::Graph => pools == 1,
        };
        if !pool_ok {
            return Err(Error::Validation(format!(
                "{:?} task models need {} maxpool layer(s), found {pools}",
                self.task,
                if self.task == Task::Node { 0 } else { 1 }
            )));
        }
        if let Some(k) = self.layers.iter().position(|l| l.kind == LayerKind::Maxpool) {
            if self.layers[k + 1..].iter().any(|l| l.kind.passes_messages()) {
                return Err(Error::Validation("message passing after maxpool".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Gcn,
    Gat,
}

/// Layer stack `[conv, relu] × depth (+ maxpool) → fc, relu → fc → softmax-out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub conv: ConvKind,
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub bias: bool,
    /// When false every ReLU is omitted, giving a purely linear model.
    pub activations: bool,
}

impl Architecture {
    pub fn gcn(depth: usize) -> Self {
        Architecture {
            conv: ConvKind::Gcn,
            depth,
            hidden: 20,
            heads: 1,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bias: true,
            activations: true,
        }
    }

    pub fn gat(depth: usize) -> Self {
        Architecture {
            conv: ConvKind::Gat,
            ..Architecture::gcn(depth)
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn build(&self, in_dim: usize, n_classes: usize, task: Task, rng: &mut RngStream) -> Result<TrainedModel> {
        if self.depth == 0 || self.hidden == 0 || in_dim == 0 || n_classes == 0 {
            return Err(Error::Config("depth, width, input and class counts must be positive".into()));
        }
        if self.conv == ConvKind::Gat && (self.heads == 0 || !self.hidden.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "{} heads do not divide hidden width {}",
                self.heads, self.hidden
            )));
        }
        let bias = |n: usize| self.bias.then(|| vec![0.0; n]);
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for _ in 0..self.depth {
            let w = glorot(dim, self.hidden, rng);
            layers.push(match self.conv {
                ConvKind::Gcn => LayerSpec::gcn(w, bias(self.hidden)),
                ConvKind::Gat => {
                    let d = self.hidden / self.heads;
                    let limit = (6.0 / (2 * d + 1) as f64).sqrt();
                    let a = (0..2 * self.hidden).map(|_| rng.uniform(-limit, limit)).collect();
                    let mut l = LayerSpec::gat(w, bias(self.hidden), a, self.heads);
                    l.leaky_slope = Some(self.leaky_slope);
                    l
                }
            });
            if self.activations {
                layers.push(LayerSpec::relu(self.hidden));
            }
            dim = self.hidden;
        }
        if task == Task::Graph {
            layers.push(LayerSpec::maxpool(dim));
        }
        layers.push(LayerSpec::fc(glorot(dim, self.hidden, rng), bias(self.hidden)));
        if self.activations {
            layers.push(LayerSpec::relu(self.hidden));
        }
        layers.push(LayerSpec::fc(glorot(self.hidden, n_classes, rng), bias(n_classes)));
        layers.push(LayerSpec::softmax_out(n_classes));
        TrainedModel::new(task, n_classes, layers)
    }
}

pub(crate) fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
    Matrix::new(fan_in, fan_out, data).expect("shape matches data")
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    m.validate()?;
    io_util::write_atomic(path.as_ref(), &io_util::to_json_bytes(m))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    parse_model(&io_util::read_text(path)?, path)
}

pub fn parse_model(text: &str, origin: &Path) -> Result<TrainedModel> {
    let m: TrainedModel = io_util::parse_json(text, origin)?;
    m.validate()?;
    Ok(m)
}
