use super::{LayerKind, LayerSpec, TrainedModel};
use crate::datasets::Task;
use crate::error::{Error, Result};
use crate::graph::{Graph, Propagation};
use crate::matrix::{softmax_in_place, Matrix};

#[inline]
pub(crate) fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Pre-activation attention scores `[h_i ‖ h_j] · a` for one head, laid out
/// like the propagation rows. Only `rows` are filled.
pub(crate) fn gat_scores(
    layer: &LayerSpec,
    h: &Matrix,
    prop: &Propagation,
    head: usize,
    rows: impl Iterator<Item = usize>,
    out: &mut Vec<f64>,
) {
    let d = layer.head_dim();
    let lo = head * d;
    let (src, dst) = (layer.attn_src(head), layer.attn_dst(head));
    let dot = |row: &[f64], a: &[f64]| row[lo..lo + d].iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
    out.clear();
    out.resize(prop.closed_len(), 0.0);
    for i in rows {
        let si = dot(h.row(i), src);
        let base = prop.offset(i);
        for (k, &j) in prop.closed(i).iter().enumerate() {
            out[base + k] = si + dot(h.row(j), dst);
        }
    }
}

/// Normalized attention of one head for `rows`, from raw scores.
pub(crate) fn attention_from_scores(
    layer: &LayerSpec,
    scores: &[f64],
    prop: &Propagation,
    rows: impl Iterator<Item = usize>,
) -> Vec<f64> {
    let slope = layer.slope();
    let mut alpha = vec![0.0; scores.len()];
    for i in rows {
        let range = prop.offset(i)..prop.offset(i + 1);
        let seg = &mut alpha[range.clone()];
        for (a, &s) in seg.iter_mut().zip(&scores[range]) {
            *a = leaky_relu(s, slope);
        }
        softmax_in_place(seg);
    }
    alpha
}

pub(crate) fn add_bias(m: &mut Matrix, bias: Option<&Vec<f64>>, rows: impl Iterator<Item = usize>) {
    if let Some(b) = bias {
        for i in rows {
            for (o, &bv) in m.row_mut(i).iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
}

pub(crate) fn add_bias_all(m: &mut Matrix, bias: Option<&Vec<f64>>) {
    let rows = m.rows();
    add_bias(m, bias, 0..rows);
}

/// Node index holding the maximum of each feature; ties go to the lowest index.
pub(crate) fn maxpool_indices(x: &Matrix) -> Vec<usize> {
    (0..x.cols())
        .map(|f| {
            let mut best = 0;
            for i in 1..x.rows() {
                if x[(i, f)] > x[(best, f)] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn forward_with(layer: &LayerSpec, x: &Matrix, prop: Option<&Propagation>) -> Result<Matrix> {
    if x.cols() != layer.in_dim {
        return Err(Error::dim("layer_forward", x.shape(), (layer.in_dim, layer.out_dim)));
    }
    let need_prop = || {
        prop.filter(|p| p.n() == x.rows())
            .ok_or_else(|| Error::dim("layer_forward", x.shape(), (prop.map_or(0, Propagation::n), 0)))
    };
    Ok(match layer.kind {
        LayerKind::GcnConv => {
            let prop = need_prop()?;
            let h = x.matmul(layer.weight())?;
            let mut out = prop.apply(&h);
            add_bias_all(&mut out, layer.bias.as_ref());
            out
        }
        LayerKind::GatAttn => {
            let prop = need_prop()?;
            let h = x.matmul(layer.weight())?;
            let d = layer.head_dim();
            let mut out = Matrix::zeros(x.rows(), layer.out_dim);
            let mut scores = Vec::new();
            for head in 0..layer.heads() {
                gat_scores(layer, &h, prop, head, 0..x.rows(), &mut scores);
                let alpha = attention_from_scores(layer, &scores, prop, 0..x.rows());
                let lo = head * d;
                for i in 0..x.rows() {
                    let base = prop.offset(i);
                    let row = &mut out.row_mut(i)[lo..lo + d];
                    for (k, &j) in prop.closed(i).iter().enumerate() {
                        let a = alpha[base + k];
                        for (o, &v) in row.iter_mut().zip(&h.row(j)[lo..lo + d]) {
                            *o += a * v;
                        }
                    }
                }
            }
            add_bias_all(&mut out, layer.bias.as_ref());
            out
        }
        LayerKind::FullyConnected => {
            let mut out = x.matmul(layer.weight())?;
            add_bias_all(&mut out, layer.bias.as_ref());
            out
        }
        LayerKind::Relu => x.map(|v| v.max(0.0)),
        LayerKind::Maxpool => {
            if x.rows() == 0 {
                return Err(Error::Validation("maxpool over an empty graph".into()));
            }
            let idx = maxpool_indices(x);
            let row: Vec<f64> = idx.iter().enumerate().map(|(f, &i)| x[(i, f)]).collect();
            Matrix::row_vector(&row)
        }
        LayerKind::SoftmaxOut => {
            let mut out = x.clone();
            for i in 0..out.rows() {
                softmax_in_place(out.row_mut(i));
            }
            out
        }
    })
}

/// Applies one layer to `x` on graph `g`.
pub fn layer_forward(layer: &LayerSpec, x: &Matrix, g: &Graph) -> Result<Matrix> {
    layer.validate()?;
    let prop = layer.kind.passes_messages().then(|| Propagation::new(g));
    forward_with(layer, x, prop.as_ref())
}

fn run(m: &TrainedModel, g: &Graph, with_softmax: bool) -> Result<Matrix> {
    if g.features().cols() != m.in_dim() {
        return Err(Error::dim("model_forward", g.features().shape(), (m.in_dim(), m.n_classes)));
    }
    let prop = Propagation::new(g);
    let mut x = g.features().clone();
    for layer in &m.layers {
        if layer.kind == LayerKind::SoftmaxOut && !with_softmax {
            break;
        }
        x = forward_with(layer, &x, Some(&prop))?;
    }
    Ok(x)
}

/// Class probabilities: one row per node for node tasks, a single row for
/// graph tasks.
pub fn model_forward(m: &TrainedModel, g: &Graph) -> Result<Matrix> {
    run(m, g, true)
}

/// Pre-softmax class scores, shaped like [`model_forward`].
pub fn model_logits(m: &TrainedModel, g: &Graph) -> Result<Matrix> {
    run(m, g, false)
}

/// Predicted class per row (lowest index wins ties).
pub fn predict(m: &TrainedModel, g: &Graph) -> Result<Vec<usize>> {
    let logits = model_logits(m, g)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Dense attention matrix of one head of a GAT layer applied to `x`.
pub fn attention_matrix(layer: &LayerSpec, x: &Matrix, g: &Graph, head: usize) -> Result<Matrix> {
    if layer.kind != LayerKind::GatAttn || head >= layer.heads() {
        return Err(Error::Config("attention_matrix needs an attention layer and a valid head".into()));
    }
    layer.validate()?;
    let prop = Propagation::new(g);
    let h = x.matmul(layer.weight())?;
    let mut scores = Vec::new();
    gat_scores(layer, &h, &prop, head, 0..g.n(), &mut scores);
    let alpha = attention_from_scores(layer, &scores, &prop, 0..g.n());
    let mut out = Matrix::zeros(g.n(), g.n());
    for i in 0..g.n() {
        for (k, &j) in prop.closed(i).iter().enumerate() {
            out[(i, j)] = alpha[prop.offset(i) + k];
        }
    }
    Ok(out)
}

impl TrainedModel {
    /// Predicted class for the readout row (`node` for node tasks).
    pub fn predicted_class(&self, g: &Graph, node: Option<usize>) -> Result<usize> {
        let logits = model_logits(self, g)?;
        let row = match self.task {
            Task::Node => node.ok_or_else(|| Error::Config("node task needs a node index".into()))?,
            Task::Graph => 0,
        };
        if row >= logits.rows() {
            return Err(Error::Validation(format!("node {row} is outside the graph")));
        }
        Ok(argmax(logits.row(row)))
    }
}
