//! Undirected graphs, node groups, GCN normalization and neighborhood queries.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// A set of node indices, kept sorted and free of duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeGroup {
    members: Vec<usize>,
}

impl NodeGroup {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        NodeGroup { members }
    }

    pub fn empty() -> Self {
        NodeGroup::default()
    }

    pub fn singleton(v: usize) -> Self {
        NodeGroup { members: vec![v] }
    }

    pub fn all(n: usize) -> Self {
        NodeGroup {
            members: (0..n).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn union(&self, other: &NodeGroup) -> NodeGroup {
        NodeGroup::new(self.iter().chain(other.iter()))
    }

    pub fn with(&self, v: usize) -> NodeGroup {
        let mut g = self.clone();
        if let Err(pos) = g.members.binary_search(&v) {
            g.members.insert(pos, v);
        }
        g
    }

    pub fn intersects(&self, other: &NodeGroup) -> bool {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().any(|v| large.contains(v))
    }

    pub fn is_superset_of(&self, other: &NodeGroup) -> bool {
        other.iter().all(|v| self.contains(v))
    }

    /// Membership indicator of length `n` (the mask `m`).
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for v in self.iter().filter(|&v| v < n) {
            m[v] = true;
        }
        m
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.members.last() {
            Some(&v) if v >= n => Err(Error::Validation(format!(
                "node group member {v} is outside [0, {n})"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for NodeGroup {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeGroup::new(iter)
    }
}

/// Undirected graph with node features and optional supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
    gt_nodes: Option<Vec<bool>>,
    gt_edges: Option<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates endpoints, rejects self-loops and duplicate edges, and checks
    /// that `features` has one row per node.
    pub fn new(n: usize, edges: Vec<(usize, usize)>, features: Matrix) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::Validation(format!(
                "features have {} rows but the graph has {n} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Validation("features contain non-finite values".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut neighbors = vec![Vec::new(); n];
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge {k} ({u}, {v}) has an endpoint outside [0, {n})"
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("edge {k} is a self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Validation(format!("edge {k} ({u}, {v}) is a duplicate")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            edges,
            features,
            node_labels: None,
            graph_label: None,
            gt_nodes: None,
            gt_edges: None,
            neighbors,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::Validation(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_ground_truth(
        mut self,
        nodes: Option<Vec<bool>>,
        edges: Option<Vec<bool>>,
    ) -> Result<Self> {
        if let Some(m) = &nodes {
            if m.len() != self.n {
                return Err(Error::Validation(format!(
                    "node ground-truth mask has length {} but the graph has {} nodes",
                    m.len(),
                    self.n
                )));
            }
        }
        if let Some(m) = &edges {
            if m.len() != self.edges.len() {
                return Err(Error::Validation(format!(
                    "edge ground-truth mask has length {} but the graph has {} edges",
                    m.len(),
                    self.edges.len()
                )));
            }
        }
        self.gt_nodes = nodes;
        self.gt_edges = edges;
        Ok(self)
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.n {
            return Err(Error::Validation(format!(
                "features have {} rows but the graph has {} nodes",
                features.rows(),
                self.n
            )));
        }
        self.features = features;
        Ok(self)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn gt_nodes(&self) -> Option<&[bool]> {
        self.gt_nodes.as_deref()
    }

    pub fn gt_edges(&self) -> Option<&[bool]> {
        self.gt_edges.as_deref()
    }

    /// Sorted open neighborhood of `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    /// Hop distance from the nearest source, up to `limit` hops.
    pub fn hop_distances(&self, sources: &[usize], limit: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            if d == limit {
                continue;
            }
            for &w in &self.neighbors[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0
            || self
                .hop_distances(&[0], usize::MAX)
                .iter()
                .all(Option::is_some)
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges
            .iter()
            .position(|&(a, b)| (a.min(b), a.max(b)) == key)
    }
}

/// Maps node indices of an extracted subgraph back to the source graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeMap {
    global: Vec<usize>,
}

impl NodeMap {
    pub fn identity(n: usize) -> Self {
        NodeMap {
            global: (0..n).collect(),
        }
    }

    /// New index of source node `v`, if it was kept.
    pub fn local(&self, v: usize) -> Option<usize> {
        self.global.binary_search(&v).ok()
    }

    /// Source index of subgraph node `i`.
    pub fn global(&self, i: usize) -> usize {
        self.global[i]
    }

    pub fn globals(&self) -> &[usize] {
        &self.global
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn to_global(&self, group: &NodeGroup) -> NodeGroup {
        group.iter().map(|i| self.global[i]).collect()
    }

    /// Source-graph group in subgraph indices; nodes that were not kept are dropped.
    pub fn to_local(&self, group: &NodeGroup) -> NodeGroup {
        group.iter().filter_map(|v| self.local(v)).collect()
    }
}

/// Subgraph induced by `keep`, with features, labels and masks restricted
/// consistently. Kept nodes are renumbered in increasing source order.
pub fn induced_subgraph(g: &Graph, keep: &NodeGroup) -> Result<(Graph, NodeMap)> {
    keep.validate(g.n())?;
    let map = NodeMap {
        global: keep.members().to_vec(),
    };
    let mut edges = Vec::new();
    let mut gt_edges = Vec::new();
    for (k, &(u, v)) in g.edges.iter().enumerate() {
        if let (Some(a), Some(b)) = (map.local(u), map.local(v)) {
            edges.push((a, b));
            if let Some(m) = &g.gt_edges {
                gt_edges.push(m[k]);
            }
        }
    }
    let f = g.features();
    let mut data = Vec::with_capacity(map.len() * f.cols());
    for &v in &map.global {
        data.extend_from_slice(f.row(v));
    }
    let features = Matrix::new(map.len(), f.cols(), data)?;
    let mut sub = Graph::new(map.len(), edges, features)?;
    if let Some(labels) = &g.node_labels {
        sub = sub.with_node_labels(map.global.iter().map(|&v| labels[v]).collect())?;
    }
    sub.graph_label = g.graph_label;
    let gt_nodes = g
        .gt_nodes
        .as_ref()
        .map(|m| map.global.iter().map(|&v| m[v]).collect());
    let gt_edges = g.gt_edges.as_ref().map(|_| gt_edges);
    sub = sub.with_ground_truth(gt_nodes, gt_edges)?;
    Ok((sub, map))
}

/// Induced subgraph on every node within `hops` of `center`.
pub fn khop_subgraph(g: &Graph, center: usize, hops: usize) -> Result<(Graph, NodeMap)> {
    if center >= g.n() {
        return Err(Error::Validation(format!(
            "center {center} is outside [0, {})",
            g.n()
        )));
    }
    let dist = g.hop_distances(&[center], hops);
    let keep: NodeGroup = (0..g.n()).filter(|&v| dist[v].is_some()).collect();
    induced_subgraph(g, &keep)
}

/// Nodes outside `group` with at least one edge into it.
pub fn group_neighbors(g: &Graph, group: &NodeGroup) -> NodeGroup {
    group
        .iter()
        .filter(|&v| v < g.n())
        .flat_map(|v| g.neighbors(v).iter().copied())
        .filter(|&w| !group.contains(w))
        .collect()
}

/// Sparse `D̃^{-1/2} (A + I) D̃^{-1/2}` in compressed rows. Each row lists the
/// closed neighborhood of a node (itself included) in increasing order.
#[derive(Clone, Debug)]
pub struct Propagation {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl Propagation {
    pub fn new(g: &Graph) -> Self {
        let degrees: Vec<usize> = (0..g.n()).map(|v| g.degree(v)).collect();
        Self::with_degrees(g, &degrees)
    }

    /// Normalization of a subgraph that keeps the degrees its nodes have in
    /// the source graph, so rows whose neighborhood is complete match the
    /// source exactly.
    pub fn for_subgraph(sub: &Graph, map: &NodeMap, source: &Graph) -> Self {
        let degrees: Vec<usize> = map.globals().iter().map(|&v| source.degree(v)).collect();
        Self::with_degrees(sub, &degrees)
    }

    fn with_degrees(g: &Graph, degrees: &[usize]) -> Self {
        let deg: Vec<f64> = degrees.iter().map(|&d| (d + 1) as f64).collect();
        let mut offsets = Vec::with_capacity(g.n() + 1);
        let mut cols = Vec::with_capacity(2 * g.edges().len() + g.n());
        let mut weights = Vec::with_capacity(cols.capacity());
        offsets.push(0);
        for i in 0..g.n() {
            let nb = g.neighbors(i);
            let split = nb.partition_point(|&j| j < i);
            let closed = nb[..split]
                .iter()
                .copied()
                .chain(std::iter::once(i))
                .chain(nb[split..].iter().copied());
            for j in closed {
                cols.push(j);
                weights.push(1.0 / (deg[i] * deg[j]).sqrt());
            }
            offsets.push(cols.len());
        }
        Propagation {
            offsets,
            cols,
            weights,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub(crate) fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Total number of stored entries (edges in both directions plus self-loops).
    pub(crate) fn closed_len(&self) -> usize {
        self.cols.len()
    }

    /// Closed neighborhood of `i`, sorted.
    #[inline]
    pub fn closed(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Dense copy of the normalized adjacency.
    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for (&j, &w) in self.closed(i).iter().zip(self.weights(i)) {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Row `i` of `Â · x`, written into `out`.
    #[inline]
    pub fn apply_row(&self, i: usize, x: &Matrix, out: &mut [f64]) {
        for (&j, &w) in self.closed(i).iter().zip(self.weights(i)) {
            for (o, &v) in out.iter_mut().zip(x.row(j)) {
                *o += w * v;
            }
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..self.n() {
            self.apply_row(i, x, out.row_mut(i));
        }
        out
    }
}

/// Dense `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalized_adjacency(g: &Graph) -> Matrix {
    Propagation::new(g).to_dense()
}

/// Random-walk context sampling around a node group.
///
/// Each context is the set of nodes visited by a uniform walk of `walk_len`
/// steps. The start node is drawn uniformly from the nodes adjacent to
/// `seed_group`; every step moves to a uniformly chosen neighbor that lies
/// within `hops` of the group and outside it. A walk with no eligible start
/// yields the empty group; a walk that gets stuck keeps what it visited.
pub fn random_walk_context(
    g: &Graph,
    seed_group: &NodeGroup,
    hops: usize,
    walk_len: usize,
    n_walks: usize,
    rng: &mut RngStream,
) -> Vec<NodeGroup> {
    let dist = g.hop_distances(seed_group.members(), hops);
    let eligible = |v: usize| matches!(dist[v], Some(d) if d > 0);
    let starts: Vec<usize> = group_neighbors(g, seed_group)
        .iter()
        .filter(|&v| eligible(v))
        .collect();
    let mut out = Vec::with_capacity(n_walks);
    let mut options = Vec::new();
    for _ in 0..n_walks {
        if starts.is_empty() {
            out.push(NodeGroup::empty());
            continue;
        }
        let mut cur = starts[rng.index(starts.len())];
        let mut visited = vec![cur];
        for _ in 0..walk_len {
            options.clear();
            options.extend(g.neighbors(cur).iter().copied().filter(|&w| eligible(w)));
            if options.is_empty() {
                break;
            }
            cur = options[rng.index(options.len())];
            visited.push(cur);
        }
        out.push(NodeGroup::new(visited));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.to_vec(), Matrix::filled(n, 1, 1.0)).unwrap()
    }

    #[test]
    fn adjacency_single_node() {
        assert_eq!(normalized_adjacency(&plain(1, &[])).data(), &[1.0]);
    }

    #[test]
    fn adjacency_single_edge() {
        assert_eq!(
            normalized_adjacency(&plain(2, &[(0, 1)])).data(),
            &[0.5, 0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn adjacency_path() {
        let a = normalized_adjacency(&plain(3, &[(0, 1), (1, 2)]));
        assert!((a[(0, 1)] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a[(0, 1)] - 0.40825).abs() < 1e-5);
        assert!((a[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a[(0, 2)], 0.0);
    }

    #[test]
    fn rejects_bad_edges() {
        let f = Matrix::zeros(3, 1);
        assert!(Graph::new(3, vec![(0, 3)], f.clone()).is_err());
        assert!(Graph::new(3, vec![(1, 1)], f.clone()).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], f.clone()).is_err());
        assert!(Graph::new(2, vec![], f).is_err());
    }

    #[test]
    fn khop_zero_is_center_only() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let (sub, map) = khop_subgraph(&g, 2, 0).unwrap();
        assert_eq!(sub.n(), 1);
        assert_eq!(map.globals(), &[2]);
        assert!(sub.edges().is_empty());
    }

    #[test]
    fn khop_star_hub_is_whole_graph() {
        let g = plain(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let (sub, map) = khop_subgraph(&g, 0, 1).unwrap();
        assert_eq!(sub.n(), 5);
        assert_eq!(sub.edges().len(), 4);
        assert_eq!(map.local(3), Some(3));
    }

    #[test]
    fn khop_restricts_masks_and_labels() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)])
            .with_node_labels(vec![0, 1, 2, 3])
            .unwrap()
            .with_ground_truth(
                Some(vec![false, true, true, false]),
                Some(vec![false, true, false]),
            )
            .unwrap();
        let (sub, map) = khop_subgraph(&g, 2, 1).unwrap();
        assert_eq!(map.globals(), &[1, 2, 3]);
        assert_eq!(sub.node_labels().unwrap(), &[1, 2, 3]);
        assert_eq!(sub.gt_nodes().unwrap(), &[true, true, false]);
        assert_eq!(sub.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(sub.gt_edges().unwrap(), &[true, false]);
    }

    #[test]
    fn neighbors_of_group() {
        let tri = plain(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(group_neighbors(&tri, &NodeGroup::singleton(0)).members(), &[1, 2]);
        assert!(group_neighbors(&tri, &NodeGroup::all(3)).is_empty());
    }

    #[test]
    fn walks_from_isolated_group_are_empty() {
        let g = plain(3, &[(1, 2)]);
        let mut rng = RngStream::new(0);
        let ctx = random_walk_context(&g, &NodeGroup::singleton(0), 3, 8, 5, &mut rng);
        assert_eq!(ctx.len(), 5);
        assert!(ctx.iter().all(NodeGroup::is_empty));
    }

    #[test]
    fn zero_length_walk_is_start_node() {
        let g = plain(4, &[(0, 1), (0, 2), (2, 3)]);
        let mut rng = RngStream::new(0);
        for c in random_walk_context(&g, &NodeGroup::singleton(0), 2, 0, 20, &mut rng) {
            assert_eq!(c.len(), 1);
            assert!(c.contains(1) || c.contains(2));
        }
    }

    #[test]
    fn walk_golden_fixture() {
        // 6-cycle with a chord; contexts recorded from the first seeded run.
        let g = plain(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)]);
        let mut rng = RngStream::new(11);
        let ctx = random_walk_context(&g, &NodeGroup::singleton(0), 2, 4, 4, &mut rng);
        let got: Vec<Vec<usize>> = ctx.iter().map(|c| c.members().to_vec()).collect();
        assert_eq!(got, WALK_FIXTURE);
    }

    const WALK_FIXTURE: [&[usize]; 4] = [&[1, 2, 4], &[1, 2], &[1, 2, 4, 5], &[1, 4, 5]];

    fn random_graph(n: usize, p: f64, rng: &mut RngStream) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.uniform(0.0, 1.0) < p {
                    edges.push((u, v));
                }
            }
        }
        plain(n, &edges)
    }

    #[test]
    fn group_neighbors_match_edge_scan() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let g = random_graph(15, 0.2, &mut rng);
            let b: NodeGroup = (0..15).filter(|_| rng.uniform(0.0, 1.0) < 0.3).collect();
            let mut want = std::collections::BTreeSet::new();
            for &(u, v) in g.edges() {
                if b.contains(u) && !b.contains(v) {
                    want.insert(v);
                }
                if b.contains(v) && !b.contains(u) {
                    want.insert(u);
                }
            }
            assert_eq!(group_neighbors(&g, &b).members(), want.into_iter().collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn adjacency_symmetric_and_supported_on_closed_neighborhood(seed in 0u64..500) {
            let mut rng = RngStream::new(seed);
            let g = random_graph(12, 0.25, &mut rng);
            let a = normalized_adjacency(&g);
            for i in 0..12 {
                for j in 0..12 {
                    prop_assert_eq!(a[(i, j)], a[(j, i)]);
                    let linked = i == j || g.neighbors(i).contains(&j);
                    prop_assert_eq!(a[(i, j)] > 0.0, linked);
                    prop_assert!(a[(i, j)] <= 1.0);
                }
            }
        }

        #[test]
        fn khop_monotone_in_hops(seed in 0u64..200, center in 0usize..12) {
            let mut rng = RngStream::new(seed);
            let g = random_graph(12, 0.15, &mut rng);
            let mut prev = 0;
            for l in 0..12 {
                let (sub, _) = khop_subgraph(&g, center, l).unwrap();
                prop_assert!(sub.n() >= prev);
                prev = sub.n();
            }
            let component = g.hop_distances(&[center], usize::MAX).iter().filter(|d| d.is_some()).count();
            prop_assert_eq!(prev, component);
        }

        #[test]
        fn walks_stay_in_neighborhood(seed in 0u64..200, hops in 0usize..4) {
            let mut rng = RngStream::new(seed);
            let g = random_graph(14, 0.2, &mut rng);
            let group: NodeGroup = (0..14).filter(|_| rng.uniform(0.0, 1.0) < 0.2).collect();
            prop_assume!(!group.is_empty());
            let dist = g.hop_distances(group.members(), hops);
            for c in random_walk_context(&g, &group, hops, 6, 8, &mut rng) {
                prop_assert!(!c.intersects(&group));
                for v in c.iter() {
                    prop_assert!(dist[v].is_some());
                }
            }
        }
    }
}
