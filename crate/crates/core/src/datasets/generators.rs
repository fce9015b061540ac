//! Synthetic graphs with planted motifs.
//!
//! Motifs are attached to distinct, uniformly chosen base nodes by a single
//! edge from the motif's first node. Ground truth marks motif members and
//! motif-internal edges; attachment and perturbation edges are unmarked.

use std::collections::HashSet;

use super::{random_split, Dataset, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// House motif: middle nodes 0 and 1 under roof 4, bottom nodes 2 and 3.
/// The base graph attaches to node 0.
pub const HOUSE_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 3), (2, 3), (0, 4), (1, 4)];
const HOUSE_ROLES: [usize; 5] = [2, 2, 3, 3, 1];

const CYCLE_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)];

const GRID_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (3, 4),
    (4, 5),
    (6, 7),
    (7, 8),
    (0, 3),
    (3, 6),
    (1, 4),
    (4, 7),
    (2, 5),
    (5, 8),
];

struct Motif<'a> {
    edges: &'a [(usize, usize)],
    roles: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaShapesConfig {
    pub base_nodes: usize,
    pub motifs: usize,
    /// Added random edges as a fraction of the edge count before perturbation.
    pub perturb_ratio: f64,
    /// Edges added per new node in the preferential-attachment base graph.
    pub attach_edges: usize,
    pub feature_dim: usize,
}

impl Default for BaShapesConfig {
    fn default() -> Self {
        BaShapesConfig {
            base_nodes: 300,
            motifs: 80,
            perturb_ratio: 0.10,
            attach_edges: 5,
            feature_dim: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaCommunityConfig {
    pub community: BaShapesConfig,
    pub inter_edges: usize,
    /// Mean of the second community's features; the first is centered at 0.
    pub feature_shift: f64,
}

impl Default for BaCommunityConfig {
    fn default() -> Self {
        BaCommunityConfig {
            community: BaShapesConfig::default(),
            inter_edges: 350,
            feature_shift: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeMotifConfig {
    /// Levels below the root; depth `d` gives `2^(d+1) - 1` base nodes.
    pub depth: u32,
    pub motifs: usize,
    pub perturb_ratio: f64,
    pub feature_dim: usize,
}

impl Default for TreeMotifConfig {
    fn default() -> Self {
        TreeMotifConfig {
            depth: 8,
            motifs: 80,
            perturb_ratio: 0.0,
            feature_dim: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecialNodeConfig {
    pub n_graphs: usize,
    pub nodes: usize,
    /// Standard deviation of the background noise features.
    pub noise: f64,
    pub feature_dim: usize,
    pub attach_edges: usize,
}

impl Default for SpecialNodeConfig {
    fn default() -> Self {
        SpecialNodeConfig {
            n_graphs: 100,
            nodes: 20,
            noise: 0.1,
            feature_dim: 1,
            attach_edges: 2,
        }
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Config(format!("perturbation ratio {r} must be finite and non-negative")));
    }
    Ok(())
}

impl BaShapesConfig {
    fn validate(&self) -> Result<()> {
        if self.base_nodes == 0 || self.attach_edges == 0 || self.base_nodes <= self.attach_edges {
            return Err(Error::Config(format!(
                "base graph needs more than {} nodes and at least one attachment edge (got {} nodes)",
                self.attach_edges, self.base_nodes
            )));
        }
        if self.motifs > self.base_nodes {
            return Err(Error::Config(format!(
                "{} motifs cannot attach to distinct nodes of a {}-node base graph",
                self.motifs, self.base_nodes
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        check_ratio(self.perturb_ratio)
    }
}

/// Preferential attachment: each new node links to `m` distinct existing
/// nodes drawn proportionally to degree, seeded by `m` isolated nodes.
pub(crate) fn barabasi_albert(n: usize, m: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n.saturating_sub(m) * m);
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * n * m);
    for source in m..n {
        for &t in &targets {
            edges.push((t, source));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        let mut chosen = HashSet::with_capacity(m);
        let mut next = Vec::with_capacity(m);
        while next.len() < m {
            let t = repeated[rng.index(repeated.len())];
            if chosen.insert(t) {
                next.push(t);
            }
        }
        targets = next;
    }
    edges
}

fn balanced_tree(depth: u32) -> (usize, Vec<(usize, usize)>) {
    let n = (1usize << (depth + 1)) - 1;
    let edges = (1..n).map(|child| ((child - 1) / 2, child)).collect();
    (n, edges)
}

struct Planted {
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    gt_nodes: Vec<bool>,
    gt_edges: Vec<bool>,
}

fn plant(
    base_n: usize,
    base_edges: Vec<(usize, usize)>,
    motif: &Motif<'_>,
    count: usize,
    perturb_ratio: f64,
    rng: &mut RngStream,
) -> Planted {
    let size = motif.roles.len();
    let n = base_n + count * size;
    let mut labels = vec![0; base_n];
    let mut gt_nodes = vec![false; base_n];
    let mut gt_edges = vec![false; base_edges.len()];
    let mut edges = base_edges;
    let anchors = rng.distinct(base_n, count);
    for (k, &anchor) in anchors.iter().enumerate() {
        let offset = base_n + k * size;
        labels.extend_from_slice(motif.roles);
        gt_nodes.extend(std::iter::repeat_n(true, size));
        for &(u, v) in motif.edges {
            edges.push((offset + u, offset + v));
            gt_edges.push(true);
        }
        edges.push((anchor, offset));
        gt_edges.push(false);
    }
    let extra = (perturb_ratio * edges.len() as f64).round() as usize;
    add_random_edges(&mut edges, &mut gt_edges, n, 0..n, 0..n, extra, rng);
    Planted {
        n,
        edges,
        labels,
        gt_nodes,
        gt_edges,
    }
}

/// Adds `count` new edges with one endpoint drawn from each range, never
/// duplicating an edge or creating a self-loop.
fn add_random_edges(
    edges: &mut Vec<(usize, usize)>,
    gt_edges: &mut Vec<bool>,
    n: usize,
    left: std::ops::Range<usize>,
    right: std::ops::Range<usize>,
    count: usize,
    rng: &mut RngStream,
) {
    let mut present: HashSet<(usize, usize)> =
        edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    let capacity = n * n.saturating_sub(1) / 2;
    let mut added = 0;
    while added < count && present.len() < capacity {
        let u = left.start + rng.index(left.len());
        let v = right.start + rng.index(right.len());
        if u != v && present.insert((u.min(v), u.max(v))) {
            edges.push((u, v));
            gt_edges.push(false);
            added += 1;
        }
    }
}

fn finish(p: Planted, features: Matrix, n_classes: usize, rng: &mut RngStream) -> Result<Dataset> {
    let g = Graph::new(p.n, p.edges, features)?
        .with_node_labels(p.labels)?
        .with_ground_truth(Some(p.gt_nodes), Some(p.gt_edges))?;
    let split = random_split(g.n(), rng);
    Dataset::new(Task::Node, n_classes, vec![g], split)
}

fn ba_shapes_planted(cfg: &BaShapesConfig, rng: &mut RngStream) -> Result<Planted> {
    cfg.validate()?;
    let base = barabasi_albert(cfg.base_nodes, cfg.attach_edges, rng);
    let house = Motif {
        edges: &HOUSE_EDGES,
        roles: &HOUSE_ROLES,
    };
    Ok(plant(cfg.base_nodes, base, &house, cfg.motifs, cfg.perturb_ratio, rng))
}

/// Preferential-attachment base graph with house motifs; 4 classes
/// (base, roof, middle, bottom) and constant features.
pub fn gen_ba_shapes(cfg: &BaShapesConfig, rng: &mut RngStream) -> Result<Dataset> {
    let p = ba_shapes_planted(cfg, rng)?;
    let features = Matrix::filled(p.n, cfg.feature_dim, 1.0);
    finish(p, features, 4, rng)
}

/// Two BA-Shapes communities joined by random edges; 8 classes (role plus
/// 4 × community) and Gaussian features whose mean depends on the community.
pub fn gen_ba_community(cfg: &BaCommunityConfig, rng: &mut RngStream) -> Result<Dataset> {
    if !cfg.feature_shift.is_finite() {
        return Err(Error::Config("feature shift must be finite".into()));
    }
    let a = ba_shapes_planted(&cfg.community, rng)?;
    let b = ba_shapes_planted(&cfg.community, rng)?;
    let offset = a.n;
    let n = a.n + b.n;
    let mut edges = a.edges;
    let mut gt_edges = a.gt_edges;
    edges.extend(b.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
    gt_edges.extend(b.gt_edges);
    add_random_edges(&mut edges, &mut gt_edges, n, 0..offset, offset..n, cfg.inter_edges, rng);
    let mut labels = a.labels;
    labels.extend(b.labels.iter().map(|&l| l + 4));
    let mut gt_nodes = a.gt_nodes;
    gt_nodes.extend(b.gt_nodes);

    let dim = cfg.community.feature_dim;
    let mut data = Vec::with_capacity(n * dim);
    for v in 0..n {
        let mean = if v < offset { 0.0 } else { cfg.feature_shift };
        data.extend((0..dim).map(|_| mean + rng.gaussian()));
    }
    let features = Matrix::new(n, dim, data)?;
    let p = Planted {
        n,
        edges,
        labels,
        gt_nodes,
        gt_edges,
    };
    finish(p, features, 8, rng)
}

fn gen_tree(cfg: &TreeMotifConfig, motif: &Motif<'_>, rng: &mut RngStream) -> Result<Dataset> {
    if cfg.depth >= 24 {
        return Err(Error::Config(format!("tree depth {} is too large", cfg.depth)));
    }
    if cfg.feature_dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    check_ratio(cfg.perturb_ratio)?;
    let (base_n, base) = balanced_tree(cfg.depth);
    if cfg.motifs > base_n {
        return Err(Error::Config(format!(
            "{} motifs cannot attach to distinct nodes of a {base_n}-node tree",
            cfg.motifs
        )));
    }
    let p = plant(base_n, base, motif, cfg.motifs, cfg.perturb_ratio, rng);
    let features = Matrix::filled(p.n, cfg.feature_dim, 1.0);
    finish(p, features, 2, rng)
}

/// Balanced binary tree with six-node cycle motifs; classes {base, motif}.
pub fn gen_tree_cycles(cfg: &TreeMotifConfig, rng: &mut RngStream) -> Result<Dataset> {
    let cycle = Motif {
        edges: &CYCLE_EDGES,
        roles: &[1; 6],
    };
    gen_tree(cfg, &cycle, rng)
}

/// Balanced binary tree with 3×3 grid motifs; classes {base, motif}.
pub fn gen_tree_grid(cfg: &TreeMotifConfig, rng: &mut RngStream) -> Result<Dataset> {
    let grid = Motif {
        edges: &GRID_EDGES,
        roles: &[1; 9],
    };
    gen_tree(cfg, &grid, rng)
}

/// Graph classification: half the graphs carry one node whose features are
/// all 1, every other node carries Gaussian noise. The label says whether
/// the special node is present and ground truth marks it.
pub fn gen_special_node(cfg: &SpecialNodeConfig, rng: &mut RngStream) -> Result<Dataset> {
    if cfg.n_graphs == 0 || cfg.nodes <= cfg.attach_edges || cfg.attach_edges == 0 {
        return Err(Error::Config(format!(
            "need at least one graph and more than {} nodes per graph",
            cfg.attach_edges
        )));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) || cfg.feature_dim == 0 {
        return Err(Error::Config("noise must be non-negative and feature dimension positive".into()));
    }
    let mut positive = vec![false; cfg.n_graphs];
    for i in rng.distinct(cfg.n_graphs, cfg.n_graphs / 2) {
        positive[i] = true;
    }
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    for &pos in &positive {
        let edges = barabasi_albert(cfg.nodes, cfg.attach_edges, rng);
        let mut data: Vec<f64> = (0..cfg.nodes * cfg.feature_dim)
            .map(|_| cfg.noise * rng.gaussian())
            .collect();
        let mut gt = vec![false; cfg.nodes];
        if pos {
            let s = rng.index(cfg.nodes);
            data[s * cfg.feature_dim..(s + 1) * cfg.feature_dim].fill(1.0);
            gt[s] = true;
        }
        let features = Matrix::new(cfg.nodes, cfg.feature_dim, data)?;
        let g = Graph::new(cfg.nodes, edges, features)?
            .with_graph_label(pos as usize)
            .with_ground_truth(Some(gt), None)?;
        graphs.push(g);
    }
    let split = random_split(graphs.len(), rng);
    Dataset::new(Task::Graph, 2, graphs, split)
}
