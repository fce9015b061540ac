//! Target/background decomposition of a trained model.
//!
//! Every activation is carried as `gamma + beta`, where `gamma` is the part
//! attributable to a target node group. Linear maps act on both parts, biases
//! are shared in proportion to the magnitude of each part, and nonlinearities
//! use the telescoping rule `f(γ) + (f(γ + β) - f(γ))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Task;
use crate::error::{Error, Result};
use crate::graph::{khop_subgraph, Graph, NodeGroup, NodeMap, Propagation};
use crate::matrix::{matvec_row_into, Matrix};
use crate::model::{argmax, attention_from_scores, forward_with, gat_scores, leaky_relu, maxpool_indices};
use crate::model::{LayerKind, LayerSpec, TrainedModel};

/// How decomposed attention recombines with decomposed messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatMode {
    /// Full attention weights applied to decomposed features.
    #[default]
    Feature,
    /// Attention split by magnitude of the decomposed scores, applied to full features.
    Attention,
}

impl std::str::FromStr for GatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(GatMode::Feature),
            "attention" => Ok(GatMode::Attention),
            other => Err(Error::Config(format!("unknown GAT mode {other:?}, expected feature or attention"))),
        }
    }
}

/// Which nodes the target group covers. Decides who receives a bias entry
/// when both portions are exactly zero there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Empty,
    Full,
    Partial,
}

impl Coverage {
    fn of(target: &NodeGroup, n: usize) -> Self {
        if target.is_empty() {
            Coverage::Empty
        } else if target.len() == n {
            Coverage::Full
        } else {
            Coverage::Partial
        }
    }

    fn zero_share(self) -> f64 {
        match self {
            Coverage::Empty => 0.0,
            Coverage::Full => 1.0,
            Coverage::Partial => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedState {
    pub gamma: Matrix,
    pub beta: Matrix,
    /// Node chosen for each feature by the last maxpool.
    pub pool_indices: Option<Vec<usize>>,
    pub coverage: Coverage,
}

impl DecomposedState {
    /// `gamma + beta`.
    pub fn full(&self) -> Matrix {
        self.gamma.add(&self.beta).expect("portions share a shape")
    }

    /// The background/target roles exchanged.
    pub fn swapped(self) -> Self {
        let coverage = match self.coverage {
            Coverage::Empty => Coverage::Full,
            Coverage::Full => Coverage::Empty,
            Coverage::Partial => Coverage::Partial,
        };
        DecomposedState {
            gamma: self.beta,
            beta: self.gamma,
            pool_indices: self.pool_indices,
            coverage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    /// Target contribution to each class logit.
    pub gamma: Vec<f64>,
    /// Background contribution to each class logit.
    pub beta: Vec<f64>,
    pub logits: Vec<f64>,
    pub target: NodeGroup,
}

impl ContributionReport {
    /// Largest relative gap between `gamma + beta` and the logits.
    pub fn completeness_error(&self) -> f64 {
        self.gamma
            .iter()
            .zip(&self.beta)
            .zip(&self.logits)
            .map(|((g, b), l)| (g + b - l).abs() / l.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// `gamma` holds the target rows of the features, `beta` the rest.
pub fn init_decomposition(g: &Graph, target: &NodeGroup) -> Result<DecomposedState> {
    target.validate(g.n())?;
    let x = g.features();
    let mut gamma = Matrix::zeros(x.rows(), x.cols());
    let mut beta = x.clone();
    for v in target.iter() {
        gamma.row_mut(v).copy_from_slice(x.row(v));
        beta.row_mut(v).fill(0.0);
    }
    Ok(DecomposedState {
        gamma,
        beta,
        pool_indices: None,
        coverage: Coverage::of(target, g.n()),
    })
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn check_input(layer: &LayerSpec, s: &DecomposedState) -> Result<()> {
    if s.gamma.cols() != layer.in_dim || s.gamma.shape() != s.beta.shape() {
        return Err(Error::dim("decompose", s.gamma.shape(), (layer.in_dim, layer.out_dim)));
    }
    Ok(())
}

fn check_prop(prop: &Propagation, s: &DecomposedState) -> Result<()> {
    if prop.n() != s.gamma.rows() {
        return Err(Error::dim("decompose", s.gamma.shape(), (prop.n(), prop.n())));
    }
    Ok(())
}

/// `x W` on `rows` only; other rows stay zero.
fn project(x: &Matrix, w: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for &i in rows {
        matvec_row_into(x.row(i), w, out.row_mut(i));
    }
    out
}

/// `Â h` on `rows` only.
fn propagate(prop: &Propagation, h: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for &i in rows {
        prop.apply_row(i, h, out.row_mut(i));
    }
    out
}

/// Shares each bias entry between the portions in proportion to their
/// magnitude at that node and feature.
fn split_bias(gamma: &mut Matrix, beta: &mut Matrix, bias: Option<&Vec<f64>>, rows: &[usize], coverage: Coverage) {
    let Some(bias) = bias else { return };
    let fallback = coverage.zero_share();
    for &i in rows {
        let (gr, br) = (gamma.row_mut(i), beta.row_mut(i));
        for ((g, b), &bv) in gr.iter_mut().zip(br.iter_mut()).zip(bias) {
            let total = g.abs() + b.abs();
            let (sg, sb) = if total > 0.0 {
                (g.abs() / total, b.abs() / total)
            } else {
                (fallback, 1.0 - fallback)
            };
            *g += bv * sg;
            *b += bv * sb;
        }
    }
}

fn gcn_rows(layer: &LayerSpec, s: &DecomposedState, prop: &Propagation, ins: &[usize], outs: &[usize]) -> DecomposedState {
    let w = layer.weight();
    let mut gamma = propagate(prop, &project(&s.gamma, w, ins), outs);
    let mut beta = propagate(prop, &project(&s.beta, w, ins), outs);
    split_bias(&mut gamma, &mut beta, layer.bias.as_ref(), outs, s.coverage);
    DecomposedState {
        gamma,
        beta,
        pool_indices: None,
        coverage: s.coverage,
    }
}

fn fc_rows(layer: &LayerSpec, s: &DecomposedState, rows: &[usize]) -> DecomposedState {
    let w = layer.weight();
    let mut gamma = project(&s.gamma, w, rows);
    let mut beta = project(&s.beta, w, rows);
    split_bias(&mut gamma, &mut beta, layer.bias.as_ref(), rows, s.coverage);
    DecomposedState {
        gamma,
        beta,
        pool_indices: s.pool_indices.clone(),
        coverage: s.coverage,
    }
}

fn relu_rows(s: &DecomposedState, rows: &[usize]) -> DecomposedState {
    let mut gamma = Matrix::zeros(s.gamma.rows(), s.gamma.cols());
    let mut beta = Matrix::zeros(s.gamma.rows(), s.gamma.cols());
    for &i in rows {
        for (f, (&g, &b)) in s.gamma.row(i).iter().zip(s.beta.row(i)).enumerate() {
            let rg = g.max(0.0);
            gamma[(i, f)] = rg;
            beta[(i, f)] = (g + b).max(0.0) - rg;
        }
    }
    DecomposedState {
        gamma,
        beta,
        pool_indices: s.pool_indices.clone(),
        coverage: s.coverage,
    }
}

/// Numerically stable logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gat_rows(
    layer: &LayerSpec,
    s: &DecomposedState,
    prop: &Propagation,
    mode: GatMode,
    ins: &[usize],
    outs: &[usize],
) -> DecomposedState {
    let w = layer.weight();
    let slope = layer.slope();
    let hg = project(&s.gamma, w, ins);
    let hb = project(&s.beta, w, ins);
    let h = hg.add(&hb).expect("same shape");
    let d = layer.head_dim();
    let n = s.gamma.rows();
    let mut gamma = Matrix::zeros(n, layer.out_dim);
    let mut beta = Matrix::zeros(n, layer.out_dim);
    let mut scores = Vec::new();
    let mut scores_g = Vec::new();
    for head in 0..layer.heads() {
        let lo = head * d;
        gat_scores(layer, &h, prop, head, outs.iter().copied(), &mut scores);
        let alpha = attention_from_scores(layer, &scores, prop, outs.iter().copied());
        if mode == GatMode::Attention {
            gat_scores(layer, &hg, prop, head, outs.iter().copied(), &mut scores_g);
        }
        for &i in outs {
            let base = prop.offset(i);
            for (k, &j) in prop.closed(i).iter().enumerate() {
                let a = alpha[base + k];
                let (ag, ab, src_g, src_b) = match mode {
                    GatMode::Feature => (a, a, hg.row(j), hb.row(j)),
                    GatMode::Attention => {
                        let eg = leaky_relu(scores_g[base + k], slope);
                        let eb = leaky_relu(scores[base + k], slope) - eg;
                        let ag = a * sigmoid(eg.abs() - eb.abs());
                        (ag, a - ag, h.row(j), h.row(j))
                    }
                };
                for t in lo..lo + d {
                    gamma[(i, t)] += ag * src_g[t];
                    beta[(i, t)] += ab * src_b[t];
                }
            }
        }
    }
    split_bias(&mut gamma, &mut beta, layer.bias.as_ref(), outs, s.coverage);
    DecomposedState {
        gamma,
        beta,
        pool_indices: None,
        coverage: s.coverage,
    }
}

fn maxpool_state(s: &DecomposedState) -> Result<DecomposedState> {
    if s.gamma.rows() == 0 {
        return Err(Error::Validation("maxpool over an empty graph".into()));
    }
    let idx = maxpool_indices(&s.full());
    let pick = |m: &Matrix| Matrix::row_vector(&idx.iter().enumerate().map(|(f, &i)| m[(i, f)]).collect::<Vec<_>>());
    Ok(DecomposedState {
        gamma: pick(&s.gamma),
        beta: pick(&s.beta),
        pool_indices: Some(idx),
        coverage: s.coverage,
    })
}

pub fn decompose_gcn(layer: &LayerSpec, s: &DecomposedState, g: &Graph) -> Result<DecomposedState> {
    check_input(layer, s)?;
    let prop = Propagation::new(g);
    check_prop(&prop, s)?;
    let rows = all_rows(s.gamma.rows());
    Ok(gcn_rows(layer, s, &prop, &rows, &rows))
}

pub fn decompose_fc(layer: &LayerSpec, s: &DecomposedState) -> Result<DecomposedState> {
    check_input(layer, s)?;
    Ok(fc_rows(layer, s, &all_rows(s.gamma.rows())))
}

pub fn decompose_relu(s: &DecomposedState) -> DecomposedState {
    relu_rows(s, &all_rows(s.gamma.rows()))
}

pub fn decompose_maxpool(s: &DecomposedState) -> Result<DecomposedState> {
    maxpool_state(s)
}

pub fn decompose_gat(layer: &LayerSpec, s: &DecomposedState, g: &Graph, mode: GatMode) -> Result<DecomposedState> {
    check_input(layer, s)?;
    let prop = Propagation::new(g);
    check_prop(&prop, s)?;
    let rows = all_rows(s.gamma.rows());
    Ok(gat_rows(layer, s, &prop, mode, &rows, &rows))
}

/// Decomposes any non-output layer.
pub fn decompose_layer(layer: &LayerSpec, s: &DecomposedState, g: &Graph, mode: GatMode) -> Result<DecomposedState> {
    match layer.kind {
        LayerKind::GcnConv => decompose_gcn(layer, s, g),
        LayerKind::GatAttn => decompose_gat(layer, s, g, mode),
        LayerKind::FullyConnected => decompose_fc(layer, s),
        LayerKind::Relu => Ok(decompose_relu(s)),
        LayerKind::Maxpool => decompose_maxpool(s),
        LayerKind::SoftmaxOut => Err(Error::Validation("the output softmax is not decomposed".into())),
    }
}

/// Decomposes `m` on `g` up to the logits. `node` picks the output row for
/// node tasks and must be `None` for graph tasks.
pub fn decompose_model(
    m: &TrainedModel,
    g: &Graph,
    target: &NodeGroup,
    node: Option<usize>,
    mode: GatMode,
) -> Result<ContributionReport> {
    Explainer::on_graph(m, g.clone(), NodeMap::identity(g.n()), node, mode)?.decompose(target)
}

/// Scores each group by its target contribution to class `cls`.
pub fn node_scores(
    m: &TrainedModel,
    g: &Graph,
    node: Option<usize>,
    cls: usize,
    targets: &[NodeGroup],
    mode: GatMode,
) -> Result<Vec<f64>> {
    let ex = match node {
        Some(v) => Explainer::for_node(m, g, v, mode)?,
        None => Explainer::for_graph(m, g, mode)?,
    };
    targets
        .par_iter()
        .map(|t| ex.score(&ex.node_map().to_local(t), cls))
        .collect()
}

/// A model bound to one computation graph, ready to score many target groups.
///
/// For node tasks the graph is the k-hop neighborhood of the explained node
/// and only rows that reach its output are computed. Groups passed to the
/// scoring methods use local indices; see [`Explainer::node_map`].
#[derive(Debug)]
pub struct Explainer<'m> {
    model: &'m TrainedModel,
    graph: Graph,
    map: NodeMap,
    prop: Propagation,
    /// Rows read by each layer, then rows written by each layer.
    rows_in: Vec<Vec<usize>>,
    rows_out: Vec<Vec<usize>>,
    out_row: usize,
    logits: Vec<f64>,
    mode: GatMode,
}

impl<'m> Explainer<'m> {
    /// Explains node `node` of `g` within its computation graph.
    pub fn for_node(model: &'m TrainedModel, g: &Graph, node: usize, mode: GatMode) -> Result<Self> {
        if model.task != Task::Node {
            return Err(Error::Config("node explanations need a node-classification model".into()));
        }
        if node >= g.n() {
            return Err(Error::Validation(format!("node {node} outside graph with {} nodes", g.n())));
        }
        let (sub, map) = khop_subgraph(g, node, model.message_passing_depth())?;
        let local = map.local(node).expect("center is kept");
        let prop = Propagation::for_subgraph(&sub, &map, g);
        Self::build(model, sub, map, prop, Some(local), mode)
    }

    /// Explains the prediction for a whole graph.
    pub fn for_graph(model: &'m TrainedModel, g: &Graph, mode: GatMode) -> Result<Self> {
        Self::on_graph(model, g.clone(), NodeMap::identity(g.n()), None, mode)
    }

    fn on_graph(model: &'m TrainedModel, graph: Graph, map: NodeMap, node: Option<usize>, mode: GatMode) -> Result<Self> {
        let prop = Propagation::new(&graph);
        Self::build(model, graph, map, prop, node, mode)
    }

    fn build(
        model: &'m TrainedModel,
        graph: Graph,
        map: NodeMap,
        prop: Propagation,
        node: Option<usize>,
        mode: GatMode,
    ) -> Result<Self> {
        if graph.features().cols() != model.in_dim() {
            return Err(Error::dim("decompose", graph.features().shape(), (model.in_dim(), 0)));
        }
        let out_row = match (model.task, node) {
            (Task::Node, Some(v)) if v < graph.n() => v,
            (Task::Node, Some(v)) => {
                return Err(Error::Validation(format!("node {v} outside graph with {} nodes", graph.n())))
            }
            (Task::Node, None) => return Err(Error::Config("node task needs a node to explain".into())),
            (Task::Graph, None) => 0,
            (Task::Graph, Some(_)) => return Err(Error::Config("graph task takes no node index".into())),
        };
        if graph.n() == 0 {
            return Err(Error::Validation("cannot explain an empty graph".into()));
        }
        let layers = &model.layers[..model.layers.len() - 1];
        let mut rows_in = vec![Vec::new(); layers.len()];
        let mut rows_out = vec![Vec::new(); layers.len()];
        let mut need = vec![out_row];
        for (k, layer) in layers.iter().enumerate().rev() {
            rows_out[k] = need.clone();
            need = match layer.kind {
                LayerKind::Maxpool => all_rows(graph.n()),
                kind if kind.passes_messages() => {
                    let mut mark = vec![false; graph.n()];
                    for &i in &need {
                        for &j in prop.closed(i) {
                            mark[j] = true;
                        }
                    }
                    (0..graph.n()).filter(|&i| mark[i]).collect()
                }
                _ => need,
            };
            rows_in[k] = need.clone();
        }
        let mut x = graph.features().clone();
        for layer in layers {
            x = forward_with(layer, &x, Some(&prop))?;
        }
        // Rows near the border of a k-hop subgraph are wrong in this forward
        // pass, but they never reach the output row.
        let logits = x.row(out_row).to_vec();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("model produces non-finite logits on this graph".into()));
        }
        Ok(Explainer {
            model,
            graph,
            map,
            prop,
            rows_in,
            rows_out,
            out_row,
            logits,
            mode,
        })
    }

    pub fn model(&self) -> &'m TrainedModel {
        self.model
    }

    /// The computation graph in local indices.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Local-to-global index map of the computation graph.
    pub fn node_map(&self) -> &NodeMap {
        &self.map
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn mode(&self) -> GatMode {
        self.mode
    }

    /// Full decomposition for a target group in local indices.
    pub fn decompose(&self, target: &NodeGroup) -> Result<ContributionReport> {
        let mut s = init_decomposition(&self.graph, target)?;
        let layers = &self.model.layers[..self.model.layers.len() - 1];
        for (k, layer) in layers.iter().enumerate() {
            let (ins, outs) = (&self.rows_in[k], &self.rows_out[k]);
            s = match layer.kind {
                LayerKind::GcnConv => gcn_rows(layer, &s, &self.prop, ins, outs),
                LayerKind::GatAttn => gat_rows(layer, &s, &self.prop, self.mode, ins, outs),
                LayerKind::FullyConnected => fc_rows(layer, &s, outs),
                LayerKind::Relu => relu_rows(&s, outs),
                LayerKind::Maxpool => maxpool_state(&s)?,
                LayerKind::SoftmaxOut => unreachable!("validated models end in one softmax"),
            };
        }
        let r = if self.model.task == Task::Node { self.out_row } else { 0 };
        Ok(ContributionReport {
            gamma: s.gamma.row(r).to_vec(),
            beta: s.beta.row(r).to_vec(),
            logits: self.logits.clone(),
            target: target.clone(),
        })
    }

    /// Target contribution of `target` (local indices) to class `cls`.
    pub fn score(&self, target: &NodeGroup, cls: usize) -> Result<f64> {
        if cls >= self.model.n_classes {
            return Err(Error::Config(format!("class {cls} outside [0, {})", self.model.n_classes)));
        }
        Ok(self.decompose(target)?.gamma[cls])
    }

    /// Singleton score of every node of the computation graph, in local order.
    pub fn node_scores(&self, cls: usize) -> Result<Vec<f64>> {
        (0..self.graph.n())
            .into_par_iter()
            .map(|v| self.score(&NodeGroup::singleton(v), cls))
            .collect()
    }
}
