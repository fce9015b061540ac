//! Explanation quality against planted ground truth.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Task};
use crate::decompose::{Explainer, GatMode};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph, NodeGroup};
use crate::model::TrainedModel;

/// Area under the ROC curve: the chance that a random positive outscores a
/// random negative, with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("roc_auc", (scores.len(), 1), (labels.len(), 1)));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, with tied blocks sharing their mean rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Mean of the two endpoint scores, in edge order.
pub fn edge_scores(node_scores: &[f64], g: &Graph) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(u, v)| (node_scores[u] + node_scores[v]) / 2.0)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Node,
    Edge,
    /// Node masks when present, otherwise edge masks.
    #[default]
    Auto,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Granularity::Node),
            "edge" => Ok(Granularity::Edge),
            "auto" => Ok(Granularity::Auto),
            other => Err(Error::Config(format!("unknown granularity {other:?}, expected node, edge or auto"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassChoice {
    /// The model's prediction.
    #[default]
    Predicted,
    /// The dataset label.
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: GatMode,
    pub granularity: Granularity,
    pub class: ClassChoice,
    /// Record wall-clock time per instance. Off by default so reports are reproducible byte for byte.
    pub timing: bool,
    /// Evaluate at most this many instances, taken in index order.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: GatMode::Feature,
            granularity: Granularity::Auto,
            class: ClassChoice::Predicted,
            timing: false,
            limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    /// Explained node (node task) or graph index (graph task).
    pub index: usize,
    pub class: usize,
    /// Source-graph node or edge index of each scored element.
    pub elements: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    /// AUC over all instances' elements pooled together.
    pub auc: f64,
    /// Mean of the per-instance AUCs that are defined.
    pub mean_instance_auc: Option<f64>,
    pub instances: Vec<InstanceResult>,
    /// Instances left out because their computation graph has no negatives or no positives.
    pub skipped: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl EvalReport {
    /// Pooled AUC recomputed from the stored scores and labels.
    pub fn recompute_auc(&self) -> Result<f64> {
        let scores: Vec<f64> = self.instances.iter().flat_map(|i| i.scores.iter().copied()).collect();
        let labels: Vec<bool> = self.instances.iter().flat_map(|i| i.labels.iter().copied()).collect();
        roc_auc(&scores, &labels)
    }
}

fn resolve(granularity: Granularity, ds: &Dataset) -> Result<Granularity> {
    let has = |f: fn(&Graph) -> bool| ds.graphs.iter().any(f);
    let nodes = has(|g| g.gt_nodes().is_some());
    let edges = has(|g| g.gt_edges().is_some());
    match granularity {
        Granularity::Auto if nodes => Ok(Granularity::Node),
        Granularity::Auto if edges => Ok(Granularity::Edge),
        Granularity::Node if nodes => Ok(Granularity::Node),
        Granularity::Edge if edges => Ok(Granularity::Edge),
        other => Err(Error::Validation(format!("dataset has no ground truth for {other:?} granularity"))),
    }
}

/// Instances evaluated for `ds`: motif nodes for node tasks, graphs with any
/// positive ground truth for graph tasks.
pub fn instances(ds: &Dataset, granularity: Granularity) -> Result<Vec<usize>> {
    let granularity = resolve(granularity, ds)?;
    let positive = |g: &Graph| match granularity {
        Granularity::Edge => g.gt_edges().is_some_and(|m| m.contains(&true)),
        _ => g.gt_nodes().is_some_and(|m| m.contains(&true)),
    };
    Ok(match ds.task {
        Task::Node => {
            let g = &ds.graphs[0];
            match g.gt_nodes() {
                Some(mask) => (0..g.n()).filter(|&v| mask[v]).collect(),
                // Edge-only masks: explain every endpoint of a marked edge.
                None => NodeGroup::new(
                    g.edges()
                        .iter()
                        .zip(g.gt_edges().unwrap_or(&[]))
                        .filter(|(_, &m)| m)
                        .flat_map(|(&(u, v), _)| [u, v]),
                )
                .members()
                .to_vec(),
            }
        }
        Task::Graph => (0..ds.graphs.len()).filter(|&i| positive(&ds.graphs[i])).collect(),
    })
}

fn explain_instance(
    m: &TrainedModel,
    ds: &Dataset,
    index: usize,
    granularity: Granularity,
    cfg: &EvalConfig,
) -> Result<InstanceResult> {
    let start = Instant::now();
    let ex = match ds.task {
        Task::Node => Explainer::for_node(m, &ds.graphs[0], index, cfg.mode)?,
        Task::Graph => Explainer::for_graph(m, &ds.graphs[index], cfg.mode)?,
    };
    let class = match cfg.class {
        ClassChoice::Predicted => ex.predicted_class(),
        ClassChoice::Label => ds
            .label(index)
            .ok_or_else(|| Error::Validation(format!("instance {index} has no label")))?,
    };
    let node_scores = ex.node_scores(class)?;
    let seconds = start.elapsed().as_secs_f64();
    let sub = ex.graph();
    let map = ex.node_map();
    let missing = || Error::Validation(format!("instance {index} lacks {granularity:?} ground truth"));
    let (elements, scores, labels) = match granularity {
        Granularity::Edge => {
            let mask = sub.gt_edges().ok_or_else(missing)?;
            let source = match ds.task {
                Task::Node => &ds.graphs[0],
                Task::Graph => &ds.graphs[index],
            };
            let ids = sub
                .edges()
                .iter()
                .map(|&(u, v)| source.edge_index(map.global(u), map.global(v)).expect("subgraph edge exists"))
                .collect();
            (ids, edge_scores(&node_scores, sub), mask.to_vec())
        }
        _ => (map.globals().to_vec(), node_scores, sub.gt_nodes().ok_or_else(missing)?.to_vec()),
    };
    let auc = roc_auc(&scores, &labels).ok();
    Ok(InstanceResult {
        index,
        class,
        elements,
        scores,
        labels,
        auc,
        seconds: cfg.timing.then_some(seconds),
    })
}

/// Scores every node of each instance's computation graph and measures how
/// well the scores separate ground-truth elements from the rest.
pub fn evaluate_explainer(m: &TrainedModel, ds: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let granularity = resolve(cfg.granularity, ds)?;
    let mut todo = instances(ds, granularity)?;
    if let Some(k) = cfg.limit {
        todo.truncate(k);
    }
    let results: Vec<InstanceResult> = todo
        .par_iter()
        .map(|&i| explain_instance(m, ds, i, granularity, cfg))
        .collect::<Result<_>>()?;
    let (kept, dropped): (Vec<_>, Vec<_>) = results.into_iter().partition(|r| r.auc.is_some());
    let skipped: Vec<usize> = dropped.iter().map(|r| r.index).collect();
    if !skipped.is_empty() {
        eprintln!(
            "warning: {} instances skipped, their computation graphs lack positives or negatives",
            skipped.len()
        );
    }
    let mut report = EvalReport {
        granularity,
        auc: 0.0,
        mean_instance_auc: None,
        instances: kept,
        skipped,
        timing: None,
    };
    report.auc = report.recompute_auc()?;
    let aucs: Vec<f64> = report.instances.iter().filter_map(|r| r.auc).collect();
    report.mean_instance_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    if cfg.timing {
        let times: Vec<f64> = report.instances.iter().filter_map(|r| r.seconds).collect();
        if !times.is_empty() {
            report.timing = Some(Timing {
                mean_seconds: times.iter().sum::<f64>() / times.len() as f64,
                max_seconds: times.iter().copied().fold(0.0, f64::max),
            });
        }
    }
    Ok(report)
}

/// Per-instance wall time of a sequential sweep over up to `limit` instances.
pub fn time_explanations(m: &TrainedModel, ds: &Dataset, mode: GatMode, limit: usize) -> Result<Timing> {
    let cfg = EvalConfig {
        mode,
        timing: true,
        ..Default::default()
    };
    let granularity = resolve(Granularity::Auto, ds)?;
    let todo: Vec<usize> = instances(ds, granularity)?.into_iter().take(limit).collect();
    if todo.is_empty() {
        return Err(Error::Validation("no instances to time".into()));
    }
    let mut times = Vec::with_capacity(todo.len());
    for &i in &todo {
        times.push(explain_instance(m, ds, i, granularity, &cfg)?.seconds.unwrap_or(0.0));
    }
    Ok(Timing {
        mean_seconds: times.iter().sum::<f64>() / times.len() as f64,
        max_seconds: times.iter().copied().fold(0.0, f64::max),
    })
}

/// Agreement between predictions on explanation subgraphs and on full graphs.
///
/// Each case is a graph with nested explanation groups. At sparsity `s` a case
/// contributes its largest group holding at most `s` of the nodes; a point is
/// left out when no case has such a group.
pub fn acc_sparsity_curve(m: &TrainedModel, cases: &[(&Graph, Vec<NodeGroup>)], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if m.task != Task::Graph {
        return Err(Error::Config("sparsity curves are defined for graph classification".into()));
    }
    let full: Vec<usize> = cases
        .iter()
        .map(|(g, _)| m.predicted_class(g, None))
        .collect::<Result<_>>()?;
    let mut curve = Vec::new();
    for &s in grid {
        let mut hits = 0;
        let mut total = 0;
        for ((g, groups), &want) in cases.iter().zip(&full) {
            let pick = groups
                .iter()
                .filter(|grp| !grp.is_empty() && grp.len() as f64 <= s * g.n() as f64 + 1e-12)
                .max_by_key(|grp| grp.len());
            let Some(grp) = pick else { continue };
            let (sub, _) = induced_subgraph(g, grp)?;
            total += 1;
            if m.predicted_class(&sub, None)? == want {
                hits += 1;
            }
        }
        if total > 0 {
            curve.push((s, hits as f64 / total as f64));
        }
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub hits: usize,
    pub total: usize,
}

impl Localization {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// How often the top-scoring single node is a ground-truth node, over graphs
/// with node ground truth.
pub fn top1_localization(m: &TrainedModel, ds: &Dataset, mode: GatMode) -> Result<Localization> {
    if ds.task != Task::Graph {
        return Err(Error::Config("top-1 localization is defined for graph classification".into()));
    }
    let todo = instances(ds, Granularity::Node)?;
    let hits: Vec<bool> = todo
        .par_iter()
        .map(|&i| {
            let g = &ds.graphs[i];
            let ex = Explainer::for_graph(m, g, mode)?;
            let scores = ex.node_scores(ex.predicted_class())?;
            let best = (0..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("nonempty graph");
            Ok(g.gt_nodes().expect("instance has node truth")[best])
        })
        .collect::<Result<_>>()?;
    Ok(Localization {
        hits: hits.iter().filter(|&&h| h).count(),
        total: hits.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Split;
    use crate::matrix::Matrix;
    use crate::model::{Architecture, LayerSpec};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    /// Pair-counting oracle.
    fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.9, 0.2], &[true, false, false]).unwrap(), 0.0);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn edge_score_examples() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Matrix::zeros(3, 1)).unwrap();
        assert_eq!(edge_scores(&[0.0, 1.0, 3.0], &g), vec![0.5, 2.0]);
        assert_eq!(edge_scores(&[0.7; 3], &g), vec![0.7, 0.7]);
    }

    fn star_dataset() -> Dataset {
        // Node 0 is marked; a one-layer GCN whose logit is its own feature
        // sum puts the largest score on it.
        let x = Matrix::from_rows(&[[5.0], [1.0], [2.0], [0.5]]).unwrap();
        let g = Graph::new(4, vec![(0, 1), (0, 2), (0, 3)], x)
            .unwrap()
            .with_graph_label(1)
            .with_ground_truth(Some(vec![true, false, false, false]), None)
            .unwrap();
        Dataset::new(Task::Graph, 2, vec![g], vec![Split::Test]).unwrap()
    }

    fn sum_model() -> TrainedModel {
        TrainedModel::new(
            Task::Graph,
            2,
            vec![
                LayerSpec::gcn(Matrix::from_rows(&[[1.0]]).unwrap(), None),
                LayerSpec::maxpool(1),
                LayerSpec::fc(Matrix::from_rows(&[[-1.0, 1.0]]).unwrap(), None),
                LayerSpec::softmax_out(2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn perfect_ground_truth_gives_auc_one() {
        let report = evaluate_explainer(&sum_model(), &star_dataset(), &EvalConfig::default()).unwrap();
        assert_eq!(report.auc, 1.0);
        assert_eq!(report.recompute_auc().unwrap(), report.auc);
        assert_eq!(report.granularity, Granularity::Node);
        assert!(report.timing.is_none());
        let loc = top1_localization(&sum_model(), &star_dataset(), GatMode::Feature).unwrap();
        assert_eq!((loc.hits, loc.total), (1, 1));
    }

    #[test]
    fn missing_edge_truth_is_an_error() {
        let cfg = EvalConfig {
            granularity: Granularity::Edge,
            ..Default::default()
        };
        assert!(evaluate_explainer(&sum_model(), &star_dataset(), &cfg).is_err());
    }

    #[test]
    fn full_subgraph_keeps_prediction() {
        let mut rng = RngStream::new(3);
        let m = Architecture::gcn(2).build(1, 2, Task::Graph, &mut rng).unwrap();
        let ds = star_dataset();
        let g = &ds.graphs[0];
        let curve = acc_sparsity_curve(&m, &[(g, vec![NodeGroup::singleton(0), NodeGroup::all(4)])], &[0.25, 0.5, 1.0]).unwrap();
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        assert_eq!(curve.len(), 3);
    }

    #[test]
    fn constant_model_agrees_everywhere() {
        let m = TrainedModel::new(
            Task::Graph,
            2,
            vec![
                LayerSpec::gcn(Matrix::from_rows(&[[0.0]]).unwrap(), Some(vec![0.0])),
                LayerSpec::maxpool(1),
                LayerSpec::fc(Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), Some(vec![0.0, 1.0])),
                LayerSpec::softmax_out(2),
            ],
        )
        .unwrap();
        let ds = star_dataset();
        let groups = vec![NodeGroup::singleton(3), NodeGroup::new([1, 3]), NodeGroup::all(4)];
        let curve = acc_sparsity_curve(&m, &[(&ds.graphs[0], groups)], &[0.25, 0.5, 0.75, 1.0]).unwrap();
        assert!(curve.iter().all(|&(_, acc)| acc == 1.0));
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            data in proptest::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            match roc_auc(&scores, &labels) {
                Ok(a) => prop_assert!((a - auc_by_pairs(&scores, &labels)).abs() < 1e-12),
                Err(_) => prop_assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
            }
        }

        #[test]
        fn auc_flips_under_negation(
            scores in proptest::collection::hash_set(-1000i32..1000, 2..30),
            seed in 0u64..1000,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let mut rng = RngStream::new(seed);
            let mut labels: Vec<bool> = scores.iter().map(|_| rng.uniform(0.0, 1.0) < 0.5).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&neg, &labels).unwrap();
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s / 100.0).exp()).collect();
            prop_assert!((roc_auc(&warped, &labels).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn edge_scores_are_endpoint_means(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed);
            let n = 3 + rng.index(8);
            let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.index(v), v)).collect();
            let g = Graph::new(n, edges.clone(), Matrix::zeros(n, 1)).unwrap();
            let s: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let e = edge_scores(&s, &g);
            for (k, &(u, v)) in g.edges().iter().enumerate() {
                prop_assert!((e[k] - 0.5 * (s[u] + s[v])).abs() < 1e-15);
            }
        }
    }
}
