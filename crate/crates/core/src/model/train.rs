//! Full-batch training with Adam and hand-derived gradients.

use serde::{Deserialize, Serialize};

use super::forward::{add_bias_all, argmax, attention_from_scores, gat_scores, maxpool_indices};
use super::{Architecture, ConvKind, LayerKind, LayerSpec, TrainedModel};
use crate::datasets::{Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::graph::{Graph, Propagation};
use crate::matrix::{softmax_in_place, Matrix};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Accuracy history is recorded every this many epochs and at the end.
    pub record_every: usize,
    /// Stop as soon as training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            record_every: 50,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// 1000 epochs for GCN and 200 for GAT.
    pub fn for_conv(conv: ConvKind) -> Self {
        TrainConfig {
            epochs: match conv {
                ConvKind::Gcn => 1000,
                ConvKind::Gat => 200,
            },
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        AdamState {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) {
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step);
    let c2 = 1.0 - state.beta2.powi(state.step);
    for (k, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

fn layer_params(l: &LayerSpec) -> impl Iterator<Item = &[f64]> {
    let w = l.weight.as_ref().map(Matrix::data);
    w.into_iter()
        .chain(l.bias.as_deref())
        .chain(l.attn_vector.as_deref())
}

/// All trainable parameters, layer by layer: weight, bias, attention vector.
pub fn parameters(m: &TrainedModel) -> Vec<f64> {
    m.layers.iter().flat_map(layer_params).flatten().copied().collect()
}

pub fn set_parameters(m: &mut TrainedModel, values: &[f64]) {
    let mut it = values.iter().copied();
    for l in &mut m.layers {
        let w = l.weight.as_mut().map(Matrix::data_mut);
        let slots = w
            .into_iter()
            .chain(l.bias.as_deref_mut())
            .chain(l.attn_vector.as_deref_mut());
        for slot in slots {
            for v in slot {
                *v = it.next().expect("parameter vector too short");
            }
        }
    }
    assert!(it.next().is_none(), "parameter vector too long");
}

enum Cache {
    Linear { input: Matrix },
    Gat { input: Matrix, h: Matrix, scores: Vec<Vec<f64>>, alpha: Vec<Vec<f64>> },
    Relu { input: Matrix },
    Pool { rows: usize, idx: Vec<usize> },
}

fn forward_cached(m: &TrainedModel, g: &Graph, prop: &Propagation) -> Result<(Matrix, Vec<Cache>)> {
    let mut x = g.features().clone();
    let mut caches = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        let (next, cache) = match layer.kind {
            LayerKind::GcnConv => {
                let h = x.matmul(layer.weight())?;
                let mut out = prop.apply(&h);
                add_bias_all(&mut out, layer.bias.as_ref());
                (out, Cache::Linear { input: x })
            }
            LayerKind::FullyConnected => {
                let mut out = x.matmul(layer.weight())?;
                add_bias_all(&mut out, layer.bias.as_ref());
                (out, Cache::Linear { input: x })
            }
            LayerKind::GatAttn => {
                let h = x.matmul(layer.weight())?;
                let d = layer.head_dim();
                let mut out = Matrix::zeros(x.rows(), layer.out_dim);
                let mut all_scores = Vec::new();
                let mut all_alpha = Vec::new();
                for head in 0..layer.heads() {
                    let mut scores = Vec::new();
                    gat_scores(layer, &h, prop, head, 0..x.rows(), &mut scores);
                    let alpha = attention_from_scores(layer, &scores, prop, 0..x.rows());
                    let lo = head * d;
                    for i in 0..x.rows() {
                        let base = prop.offset(i);
                        for (k, &j) in prop.closed(i).iter().enumerate() {
                            let a = alpha[base + k];
                            let (src, dst) = (h.row(j)[lo..lo + d].to_vec(), &mut out.row_mut(i)[lo..lo + d]);
                            for (o, v) in dst.iter_mut().zip(src) {
                                *o += a * v;
                            }
                        }
                    }
                    all_scores.push(scores);
                    all_alpha.push(alpha);
                }
                add_bias_all(&mut out, layer.bias.as_ref());
                (out, Cache::Gat { input: x, h, scores: all_scores, alpha: all_alpha })
            }
            LayerKind::Relu => (x.map(|v| v.max(0.0)), Cache::Relu { input: x }),
            LayerKind::Maxpool => {
                let idx = maxpool_indices(&x);
                let row: Vec<f64> = idx.iter().enumerate().map(|(f, &i)| x[(i, f)]).collect();
                (Matrix::row_vector(&row), Cache::Pool { rows: x.rows(), idx })
            }
            LayerKind::SoftmaxOut => break,
        };
        caches.push(cache);
        x = next;
    }
    Ok((x, caches))
}

fn row_sums_into(d: &Matrix, out: &mut [f64]) {
    for i in 0..d.rows() {
        for (o, &v) in out.iter_mut().zip(d.row(i)) {
            *o += v;
        }
    }
}

/// Accumulates parameter gradients into `grad` (laid out like
/// [`parameters`]) and returns the gradient with respect to the input.
fn backward(
    m: &TrainedModel,
    caches: &[Cache],
    prop: &Propagation,
    mut d_out: Matrix,
    offsets: &[usize],
    grad: &mut [f64],
) -> Result<()> {
    for (k, cache) in caches.iter().enumerate().rev() {
        let layer = &m.layers[k];
        let mut slot = offsets[k];
        d_out = match cache {
            Cache::Linear { input } => {
                let w = layer.weight();
                // GCN: Z = Â (X W) + b, so dH = Â dZ (Â is symmetric).
                let d_h = if layer.kind == LayerKind::GcnConv {
                    prop.apply(&d_out)
                } else {
                    d_out.clone()
                };
                let dw = input.transpose().matmul(&d_h)?;
                for (g, v) in grad[slot..slot + dw.data().len()].iter_mut().zip(dw.data()) {
                    *g += v;
                }
                slot += dw.data().len();
                if layer.bias.is_some() {
                    row_sums_into(&d_out, &mut grad[slot..slot + layer.out_dim]);
                }
                d_h.matmul(&w.transpose())?
            }
            Cache::Gat { input, h, scores, alpha } => {
                let d = layer.head_dim();
                let slope = layer.slope();
                let n = input.rows();
                let mut d_h = Matrix::zeros(n, layer.out_dim);
                let w_len = layer.in_dim * layer.out_dim;
                let attn_slot = slot + w_len + layer.bias.as_ref().map_or(0, Vec::len);
                for head in 0..layer.heads() {
                    let lo = head * d;
                    let (a_src, a_dst) = (layer.attn_src(head), layer.attn_dst(head));
                    let (alpha, scores) = (&alpha[head], &scores[head]);
                    let mut d_src = vec![0.0; d];
                    let mut d_dst = vec![0.0; d];
                    for i in 0..n {
                        let base = prop.offset(i);
                        let nb = prop.closed(i);
                        let g_i = &d_out.row(i)[lo..lo + d];
                        // dα_ij = dOut_i · H_j and aggregation term dH_j += α_ij dOut_i.
                        let d_alpha: Vec<f64> = nb
                            .iter()
                            .map(|&j| g_i.iter().zip(&h.row(j)[lo..lo + d]).map(|(a, b)| a * b).sum())
                            .collect();
                        let mean: f64 = d_alpha.iter().zip(&alpha[base..]).map(|(da, a)| da * a).sum();
                        for (k, &j) in nb.iter().enumerate() {
                            let a = alpha[base + k];
                            let g_i = d_out.row(i)[lo..lo + d].to_vec();
                            for (dh, gv) in d_h.row_mut(j)[lo..lo + d].iter_mut().zip(&g_i) {
                                *dh += a * gv;
                            }
                            let de = a * (d_alpha[k] - mean);
                            let ds = if scores[base + k] > 0.0 { de } else { slope * de };
                            if ds == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                d_src[t] += ds * h[(i, lo + t)];
                                d_dst[t] += ds * h[(j, lo + t)];
                            }
                            for t in 0..d {
                                d_h[(i, lo + t)] += ds * a_src[t];
                                d_h[(j, lo + t)] += ds * a_dst[t];
                            }
                        }
                    }
                    let off = attn_slot + 2 * head * d;
                    for t in 0..d {
                        grad[off + t] += d_src[t];
                        grad[off + d + t] += d_dst[t];
                    }
                }
                let dw = input.transpose().matmul(&d_h)?;
                for (g, v) in grad[slot..slot + w_len].iter_mut().zip(dw.data()) {
                    *g += v;
                }
                slot += w_len;
                if layer.bias.is_some() {
                    row_sums_into(&d_out, &mut grad[slot..slot + layer.out_dim]);
                }
                d_h.matmul(&layer.weight().transpose())?
            }
            Cache::Relu { input } => input.zip_with(&d_out, "relu_backward", |x, g| if x > 0.0 { g } else { 0.0 })?,
            Cache::Pool { rows, idx } => {
                let mut dx = Matrix::zeros(*rows, idx.len());
                for (f, &i) in idx.iter().enumerate() {
                    dx[(i, f)] = d_out[(0, f)];
                }
                dx
            }
        };
    }
    Ok(())
}

fn param_offsets(m: &TrainedModel) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(m.layers.len());
    let mut acc = 0;
    for l in &m.layers {
        offsets.push(acc);
        acc += layer_params(l).map(<[f64]>::len).sum::<usize>();
    }
    offsets
}

fn ensure_compatible(m: &TrainedModel, ds: &Dataset) -> Result<()> {
    if m.task != ds.task || m.n_classes != ds.n_classes || m.in_dim() != ds.feature_dim() {
        return Err(Error::Validation(format!(
            "model ({:?}, {} classes, {} features) does not fit dataset ({:?}, {} classes, {} features)",
            m.task,
            m.n_classes,
            m.in_dim(),
            ds.task,
            ds.n_classes,
            ds.feature_dim()
        )));
    }
    Ok(())
}

/// Cross-entropy on `rows` of `logits`; writes `(p - y) * scale` into `d`.
fn cross_entropy(logits: &Matrix, rows: &[(usize, usize)], scale: f64, d: &mut Matrix) -> (f64, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut p = Vec::new();
    for &(i, y) in rows {
        p.clear();
        p.extend_from_slice(logits.row(i));
        if argmax(&p) == y {
            correct += 1;
        }
        softmax_in_place(&mut p);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (c, (dv, &pv)) in d.row_mut(i).iter_mut().zip(&p).enumerate() {
            *dv = scale * (pv - if c == y { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, correct)
}

struct Prepared {
    props: Vec<Propagation>,
}

impl Prepared {
    fn new(ds: &Dataset) -> Self {
        Prepared {
            props: ds.graphs.iter().map(Propagation::new).collect(),
        }
    }
}

fn loss_grad_prepared(m: &TrainedModel, ds: &Dataset, prep: &Prepared) -> Result<(f64, Vec<f64>, f64)> {
    let offsets = param_offsets(m);
    let mut grad = vec![0.0; parameters(m).len()];
    let train = ds.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let scale = 1.0 / train.len() as f64;
    let label = |i: usize| ds.label(i).expect("validated dataset has labels");
    let (loss, correct) = match ds.task {
        Task::Node => {
            let g = &ds.graphs[0];
            let (logits, caches) = forward_cached(m, g, &prep.props[0])?;
            let rows: Vec<(usize, usize)> = train.iter().map(|&i| (i, label(i))).collect();
            let mut d = Matrix::zeros(logits.rows(), logits.cols());
            let r = cross_entropy(&logits, &rows, scale, &mut d);
            backward(m, &caches, &prep.props[0], d, &offsets, &mut grad)?;
            r
        }
        Task::Graph => {
            let mut total = (0.0, 0);
            for &gi in &train {
                let (logits, caches) = forward_cached(m, &ds.graphs[gi], &prep.props[gi])?;
                let mut d = Matrix::zeros(1, logits.cols());
                let (l, c) = cross_entropy(&logits, &[(0, label(gi))], scale, &mut d);
                total.0 += l;
                total.1 += c;
                backward(m, &caches, &prep.props[gi], d, &offsets, &mut grad)?;
            }
            total
        }
    };
    Ok((loss, grad, correct as f64 / train.len() as f64))
}

/// Mean cross-entropy over the training split and its gradient with respect
/// to [`parameters`].
pub fn loss_and_gradient(m: &TrainedModel, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    ensure_compatible(m, ds)?;
    let (loss, grad, _) = loss_grad_prepared(m, ds, &Prepared::new(ds))?;
    Ok((loss, grad))
}

fn accuracies(m: &TrainedModel, ds: &Dataset, prep: &Prepared) -> Result<[f64; 3]> {
    let predictions: Vec<usize> = match ds.task {
        Task::Node => {
            let (logits, _) = forward_cached(m, &ds.graphs[0], &prep.props[0])?;
            (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
        }
        Task::Graph => ds
            .graphs
            .iter()
            .zip(&prep.props)
            .map(|(g, p)| forward_cached(m, g, p).map(|(l, _)| argmax(l.row(0))))
            .collect::<Result<_>>()?,
    };
    let acc = |which: Split| {
        let idx = ds.indices(which);
        if idx.is_empty() {
            return 0.0;
        }
        let hits = idx.iter().filter(|&&i| Some(predictions[i]) == ds.label(i)).count();
        hits as f64 / idx.len() as f64
    };
    Ok([acc(Split::Train), acc(Split::Val), acc(Split::Test)])
}

/// Accuracy of `m` on one split.
pub fn accuracy(m: &TrainedModel, ds: &Dataset, which: Split) -> Result<f64> {
    ensure_compatible(m, ds)?;
    let a = accuracies(m, ds, &Prepared::new(ds))?;
    Ok(match which {
        Split::Train => a[0],
        Split::Val => a[1],
        Split::Test => a[2],
    })
}

/// Builds a model from `arch` and fits it to the training split.
pub fn train(arch: &Architecture, ds: &Dataset, cfg: &TrainConfig, rng: &mut RngStream) -> Result<TrainedModel> {
    let model = arch.build(ds.feature_dim(), ds.n_classes, ds.task, rng)?;
    fit(model, ds, cfg)
}

impl TrainedModel {
    /// Continues training this model; see [`train`].
    pub fn fit(self, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
        fit(self, ds, cfg)
    }
}

fn fit(mut model: TrainedModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    ensure_compatible(&model, ds)?;
    let prep = Prepared::new(ds);
    let mut params = parameters(&model);
    let mut adam = AdamState::new(params.len(), cfg);
    let record_every = cfg.record_every.max(1);
    for epoch in 1..=cfg.epochs {
        let (loss, grad, _) = loss_grad_prepared(&model, ds, &prep)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        adam_step(&mut adam, &mut params, &grad);
        set_parameters(&mut model, &params);

        let stop = match cfg.stop_at_train_accuracy {
            Some(target) => accuracies(&model, ds, &prep)?[0] >= target,
            None => false,
        };
        if epoch % record_every == 0 || epoch == cfg.epochs || stop {
            let [train_acc, val_acc, test_acc] = accuracies(&model, ds, &prep)?;
            model.history.push(EpochRecord {
                epoch,
                loss,
                train_acc,
                val_acc,
                test_acc,
            });
        }
        if stop {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::random_split;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(1, &cfg);
        let mut theta = [1.0];
        adam_step(&mut state, &mut theta, &[2.0]);
        // m̂ = 2, v̂ = 4, so the step is lr · 2 / (2 + ε).
        let want = 1.0 - 0.005 * 2.0 / (2.0 + 1e-8);
        assert!((theta[0] - want).abs() < 1e-15);
        assert!((theta[0] - 0.995).abs() < 1e-9);
    }

    fn toy_node_dataset(seed: u64, dim: usize, n: usize) -> Dataset {
        let mut rng = RngStream::new(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.uniform(0.0, 1.0) < 0.3 {
                    edges.push((u, v));
                }
            }
        }
        let data = (0..n * dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let labels = (0..n).map(|_| rng.index(3)).collect();
        let g = Graph::new(n, edges, Matrix::new(n, dim, data).unwrap())
            .unwrap()
            .with_node_labels(labels)
            .unwrap();
        let split = random_split(n, &mut rng);
        Dataset::new(Task::Node, 3, vec![g], split).unwrap()
    }

    fn toy_graph_dataset(seed: u64, dim: usize) -> Dataset {
        let mut rng = RngStream::new(seed);
        let graphs = (0..6)
            .map(|k| {
                let n = 4 + k % 3;
                let edges = (1..n).map(|v| (rng.index(v), v)).collect();
                let data = (0..n * dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
                Graph::new(n, edges, Matrix::new(n, dim, data).unwrap())
                    .unwrap()
                    .with_graph_label(k % 2)
            })
            .collect();
        let split = vec![Split::Train; 6];
        Dataset::new(Task::Graph, 2, graphs, split).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = toy_node_dataset(1, 3, 10);
        let mut rng = RngStream::new(2);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let trained = train(&Architecture::gcn(2), &ds, &cfg, &mut rng.clone()).unwrap();
        let fresh = Architecture::gcn(2).build(3, 3, Task::Node, &mut rng).unwrap();
        assert_eq!(trained, fresh);
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = RngStream::new(3);
        let mut m = Architecture::gat(2).build(3, 2, Task::Graph, &mut rng).unwrap();
        let p = parameters(&m);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        set_parameters(&mut m, &shifted);
        assert_eq!(parameters(&m), shifted);
    }

    #[test]
    fn training_reduces_loss() {
        let ds = toy_node_dataset(4, 3, 20);
        let mut rng = RngStream::new(5);
        let m0 = Architecture::gcn(2).build(3, 3, Task::Node, &mut rng).unwrap();
        let (l0, _) = loss_and_gradient(&m0, &ds).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            record_every: 25,
            ..Default::default()
        };
        let m1 = m0.fit(&ds, &cfg).unwrap();
        let (l1, _) = loss_and_gradient(&m1, &ds).unwrap();
        assert!(l1 < l0, "{l1} >= {l0}");
        assert_eq!(m1.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![25, 50, 75, 100]);
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = toy_node_dataset(6, 3, 12);
        let mut rng = RngStream::new(7);
        let mut m = Architecture::gcn(1).build(3, 3, Task::Node, &mut rng).unwrap();
        let huge: Vec<f64> = parameters(&m).iter().map(|_| 1e300).collect();
        set_parameters(&mut m, &huge);
        match m.fit(&ds, &TrainConfig::default()) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    /// Zero biases put dead rows exactly on the ReLU kink, where a central
    /// difference averages the two one-sided slopes, so parameters are jittered.
    fn check_gradient(m: &TrainedModel, ds: &Dataset, rng: &mut RngStream) {
        let mut m = m.clone();
        let jittered: Vec<f64> = parameters(&m).iter().map(|v| v + rng.uniform(-0.1, 0.1)).collect();
        set_parameters(&mut m, &jittered);
        let m = &m;
        let (_, grad) = loss_and_gradient(m, ds).unwrap();
        let p = parameters(m);
        let h = 1e-5;
        let mut probe = m.clone();
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] = p[k] + h;
            set_parameters(&mut probe, &q);
            let up = loss_and_gradient(&probe, ds).unwrap().0;
            q[k] = p[k] - h;
            set_parameters(&mut probe, &q);
            let down = loss_and_gradient(&probe, ds).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            assert!(err < 1e-4, "param {k}: analytic {} vs numeric {fd}", grad[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = RngStream::new(100 + seed);
            let node = toy_node_dataset(seed, 3, 9);
            let graph = toy_graph_dataset(seed, 3);
            for mut arch in [Architecture::gcn(2), Architecture::gat(2)] {
                arch.hidden = 4;
                arch.heads = if arch.conv == ConvKind::Gat { 2 } else { 1 };
                let m = arch.build(3, 3, Task::Node, &mut rng).unwrap();
                check_gradient(&m, &node, &mut rng);
                let m = arch.build(3, 2, Task::Graph, &mut rng).unwrap();
                check_gradient(&m, &graph, &mut rng);
            }
        }
    }
}
