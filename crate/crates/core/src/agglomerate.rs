//! Subgraph explanations by greedy agglomeration of node groups.
//!
//! Groups are scored in context: the contribution of a group is averaged over
//! random-walk contexts drawn around it. Starting from the most distinctive
//! single nodes, each group repeatedly absorbs the neighbors whose marginal
//! effect deviates most from the average, and groups that come to share nodes
//! are merged.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::Explainer;
use crate::error::{Error, Result};
use crate::graph::{group_neighbors, random_walk_context, NodeGroup, NodeMap};
use crate::rng::{hash_indices, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_walks: usize,
    pub walk_len: usize,
    /// Context radius around the group; defaults to the model's message-passing depth.
    pub hops: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_walks: 10,
            walk_len: 8,
            hops: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Keep candidates with `r >= q * max r`.
    #[default]
    Threshold,
    /// Keep the `ceil(q * count)` highest-ranked candidates, at least one.
    TopFraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgglomerateConfig {
    pub q: f64,
    /// Maximum number of levels; defaults to the number of nodes.
    pub budget: Option<usize>,
    pub selection: Selection,
    pub sampler: SamplerConfig,
}

impl Default for AgglomerateConfig {
    fn default() -> Self {
        AgglomerateConfig {
            q: 0.6,
            budget: None,
            selection: Selection::Threshold,
            sampler: SamplerConfig::default(),
        }
    }
}

impl AgglomerateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if self.budget == Some(0) {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Contextual scoring of groups for one class.
///
/// Every group draws its contexts from a stream derived from its own members,
/// so a score does not depend on evaluation order or thread count.
pub struct ContextScorer<'a, 'm> {
    explainer: &'a Explainer<'m>,
    cls: usize,
    sampler: SamplerConfig,
    hops: usize,
    rng: RngStream,
    memo: Mutex<HashMap<NodeGroup, f64>>,
}

impl<'a, 'm> ContextScorer<'a, 'm> {
    pub fn new(explainer: &'a Explainer<'m>, cls: usize, sampler: &SamplerConfig, rng: &RngStream) -> Self {
        ContextScorer {
            explainer,
            cls,
            sampler: sampler.clone(),
            hops: sampler.hops.unwrap_or_else(|| explainer.model().message_passing_depth()),
            rng: rng.clone(),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn explainer(&self) -> &Explainer<'m> {
        self.explainer
    }

    pub fn class(&self) -> usize {
        self.cls
    }

    /// Target contribution of `group` alone, memoized.
    pub fn contribution(&self, group: &NodeGroup) -> Result<f64> {
        if let Some(&v) = self.memo.lock().expect("memo lock").get(group) {
            return Ok(v);
        }
        let v = self.explainer.score(group, self.cls)?;
        self.memo.lock().expect("memo lock").insert(group.clone(), v);
        Ok(v)
    }

    /// The contexts `phi` averages over for `group`.
    pub fn contexts(&self, group: &NodeGroup) -> Vec<NodeGroup> {
        let mut rng = self.rng.derive(hash_indices(group.members()));
        random_walk_context(
            self.explainer.graph(),
            group,
            self.hops,
            self.sampler.walk_len,
            self.sampler.n_walks,
            &mut rng,
        )
    }

    /// Mean over contexts `C` of `f(group ∪ C) - f(C)`; zero for the empty group.
    pub fn phi(&self, group: &NodeGroup) -> Result<f64> {
        if group.is_empty() {
            return Ok(0.0);
        }
        let contexts = self.contexts(group);
        if contexts.is_empty() {
            return self.contribution(group);
        }
        let mut total = 0.0;
        for c in &contexts {
            total += self.contribution(&group.union(c))? - self.contribution(c)?;
        }
        Ok(total / contexts.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: usize,
    /// Marginal effect `phi(base ∪ {v}) - phi(base)`.
    pub s: f64,
    /// Deviation `|s - mean s|`.
    pub r: f64,
}

/// Ranks the neighbors of `base`, or every node when `base` is empty.
pub fn rank_candidates(scorer: &ContextScorer<'_, '_>, base: &NodeGroup) -> Result<Vec<Candidate>> {
    let pool = if base.is_empty() {
        NodeGroup::all(scorer.explainer.graph().n())
    } else {
        group_neighbors(scorer.explainer.graph(), base)
    };
    let phi_base = scorer.phi(base)?;
    let s: Vec<(usize, f64)> = pool
        .members()
        .par_iter()
        .map(|&v| Ok((v, scorer.phi(&base.with(v))? - phi_base)))
        .collect::<Result<_>>()?;
    Ok(deviations(s))
}

/// Turns marginal effects into candidates with `r = |s - mean s|`.
pub fn deviations(s: Vec<(usize, f64)>) -> Vec<Candidate> {
    if s.is_empty() {
        return Vec::new();
    }
    let mean = s.iter().map(|(_, v)| v).sum::<f64>() / s.len() as f64;
    s.into_iter()
        .map(|(node, s)| Candidate {
            node,
            s,
            r: (s - mean).abs(),
        })
        .collect()
}

/// Nodes picked from `cands` under the selection rule, in candidate order.
pub fn select(cands: &[Candidate], q: f64, rule: Selection) -> Vec<usize> {
    if cands.is_empty() {
        return Vec::new();
    }
    match rule {
        Selection::Threshold => {
            let max = cands.iter().map(|c| c.r).fold(0.0, f64::max);
            cands.iter().filter(|c| c.r >= q * max).map(|c| c.node).collect()
        }
        Selection::TopFraction => {
            let k = ((q * cands.len() as f64).ceil() as usize).clamp(1, cands.len());
            let mut order: Vec<&Candidate> = cands.iter().collect();
            order.sort_by(|a, b| b.r.total_cmp(&a.r).then(a.node.cmp(&b.node)));
            let mut keep: Vec<usize> = order[..k].iter().map(|c| c.node).collect();
            keep.sort_unstable();
            keep
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub group: NodeGroup,
    pub score: f64,
    /// Indices into the previous level of the groups merged into this one.
    pub parents: Vec<usize>,
}

/// One ranking round: the candidates of one group and those selected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Level the ranked group belongs to; 0 for the initial ranking of all nodes.
    pub level: usize,
    /// Index of the ranked group in its level.
    pub group: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub selected: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// One group spans every node.
    Complete,
    BudgetExhausted,
    /// No group could grow further.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTree {
    pub class: usize,
    pub q: f64,
    pub selection: Selection,
    /// Level `i` holds the groups S_{i+1}.
    pub levels: Vec<Vec<TreeNode>>,
    pub steps: Vec<StepLog>,
    pub termination: Termination,
}

impl ExplanationTree {
    /// A nested chain, one group per level, ending at the best final group
    /// and following the best-scoring parent backwards.
    pub fn best_chain(&self) -> Vec<&TreeNode> {
        let best = |ids: &mut dyn Iterator<Item = usize>, level: &[TreeNode]| {
            ids.max_by(|&a, &b| level[a].score.total_cmp(&level[b].score).then(b.cmp(&a)))
        };
        let Some(last) = self.levels.last() else {
            return Vec::new();
        };
        let mut chain = Vec::with_capacity(self.levels.len());
        let mut at = best(&mut (0..last.len()), last);
        for (depth, level) in self.levels.iter().enumerate().rev() {
            let Some(i) = at else { break };
            chain.push(&level[i]);
            if depth > 0 {
                at = best(&mut level[i].parents.iter().copied(), &self.levels[depth - 1]);
            }
        }
        chain.reverse();
        chain
    }

    /// Rewrites every node index through `map`.
    pub fn to_global(mut self, map: &NodeMap) -> Self {
        for level in &mut self.levels {
            for t in level {
                t.group = map.to_global(&t.group);
            }
        }
        for s in &mut self.steps {
            for c in &mut s.candidates {
                c.node = map.global(c.node);
            }
            for v in &mut s.selected {
                *v = map.global(*v);
            }
        }
        self
    }

    /// Checks nesting, nonincreasing level sizes and that every selection
    /// satisfies the recorded rule.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        for w in self.levels.windows(2) {
            if w[1].len() > w[0].len() {
                return fail(format!("level grows from {} to {} groups", w[0].len(), w[1].len()));
            }
            for t in &w[1] {
                for &p in &t.parents {
                    if !t.group.is_superset_of(&w[0][p].group) {
                        return fail(format!("group {:?} does not contain parent {:?}", t.group, w[0][p].group));
                    }
                }
            }
        }
        for s in &self.steps {
            let want = select(&s.candidates, self.q, self.selection);
            if want != s.selected {
                return fail(format!("step at level {} selected {:?}, rule gives {want:?}", s.level, s.selected));
            }
        }
        Ok(())
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Merges groups that share a node. Each output carries the indices of its
/// inputs and appears in order of its first input.
fn merge_overlapping(groups: Vec<NodeGroup>) -> Vec<(NodeGroup, Vec<usize>)> {
    let mut uf = UnionFind((0..groups.len()).collect());
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (k, g) in groups.iter().enumerate() {
        for v in g.iter() {
            match owner.get(&v) {
                Some(&o) => uf.union(o, k),
                None => {
                    owner.insert(v, k);
                }
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut out: Vec<(NodeGroup, Vec<usize>)> = Vec::new();
    for (k, g) in groups.into_iter().enumerate() {
        let root = uf.find(k);
        match slot.get(&root) {
            Some(&s) => {
                let merged = out[s].0.union(&g);
                out[s].0 = merged;
                out[s].1.push(k);
            }
            None => {
                slot.insert(root, out.len());
                out.push((g, vec![k]));
            }
        }
    }
    out
}

/// Builds the explanation tree for class `cls` on the explainer's
/// computation graph. Groups are reported in source-graph indices.
pub fn agglomerate(explainer: &Explainer<'_>, cls: usize, cfg: &AgglomerateConfig, rng: &RngStream) -> Result<ExplanationTree> {
    cfg.validate()?;
    let scorer = ContextScorer::new(explainer, cls, &cfg.sampler, rng);
    let n = explainer.graph().n();
    let budget = cfg.budget.unwrap_or(n).max(1);

    let first = rank_candidates(&scorer, &NodeGroup::empty())?;
    let picked = select(&first, cfg.q, cfg.selection);
    let level1: Vec<TreeNode> = first
        .iter()
        .filter(|c| picked.contains(&c.node))
        .map(|c| TreeNode {
            group: NodeGroup::singleton(c.node),
            score: c.s,
            parents: Vec::new(),
        })
        .collect();
    let mut steps = vec![StepLog {
        level: 0,
        group: None,
        candidates: first,
        selected: picked,
    }];
    let mut levels = vec![level1];

    let termination = loop {
        let current = levels.last().expect("at least one level");
        if current.len() == 1 && current[0].group.len() == n {
            break Termination::Complete;
        }
        if levels.len() >= budget {
            break Termination::BudgetExhausted;
        }
        let level = levels.len();
        let rounds: Vec<(Vec<Candidate>, Vec<usize>)> = current
            .iter()
            .map(|t| {
                let cands = rank_candidates(&scorer, &t.group)?;
                let sel = select(&cands, cfg.q, cfg.selection);
                Ok((cands, sel))
            })
            .collect::<Result<_>>()?;
        if rounds.iter().all(|(_, sel)| sel.is_empty()) {
            break Termination::Stalled;
        }
        let grown: Vec<NodeGroup> = current
            .iter()
            .zip(&rounds)
            .map(|(t, (_, sel))| t.group.union(&NodeGroup::new(sel.iter().copied())))
            .collect();
        for (k, (cands, sel)) in rounds.into_iter().enumerate() {
            steps.push(StepLog {
                level,
                group: Some(k),
                candidates: cands,
                selected: sel,
            });
        }
        let merged = merge_overlapping(grown);
        let scores: Vec<f64> = merged
            .par_iter()
            .map(|(g, _)| scorer.phi(g))
            .collect::<Result<_>>()?;
        levels.push(
            merged
                .into_iter()
                .zip(scores)
                .map(|((group, parents), score)| TreeNode { group, score, parents })
                .collect(),
        );
    };

    Ok(ExplanationTree {
        class: cls,
        q: cfg.q,
        selection: cfg.selection,
        levels,
        steps,
        termination,
    }
    .to_global(explainer.node_map()))
}

fn dot_color(score: f64) -> &'static str {
    if score > 0.0 {
        "#d62728"
    } else if score < 0.0 {
        "#1f77b4"
    } else {
        "#7f7f7f"
    }
}

/// Graphviz rendering of the computation graph. Nodes are filled red for
/// positive and blue for negative single-node scores; the groups of `level`
/// (1-based) are drawn as clusters labeled with their scores.
pub fn to_dot(tree: &ExplanationTree, explainer: &Explainer<'_>, level: usize) -> String {
    let g = explainer.graph();
    let map = explainer.node_map();
    let singles: HashMap<usize, f64> = tree
        .steps
        .first()
        .map(|s| s.candidates.iter().map(|c| (c.node, c.s)).collect())
        .unwrap_or_default();
    let mut out = String::from("graph explanation {\n  node [style=filled, fontcolor=white];\n");
    let _ = writeln!(out, "  label=\"class {} ({:?})\";", tree.class, tree.termination);
    let mut clustered = vec![false; g.n()];
    if let Some(groups) = level.checked_sub(1).and_then(|l| tree.levels.get(l)) {
        for (k, t) in groups.iter().enumerate() {
            let _ = writeln!(out, "  subgraph cluster_{k} {{\n    label=\"{:+.4}\";\n    color=\"{}\";", t.score, dot_color(t.score));
            for v in t.group.iter() {
                if let Some(i) = map.local(v) {
                    if !clustered[i] {
                        clustered[i] = true;
                        let _ = writeln!(out, "    n{v};");
                    }
                }
            }
            out.push_str("  }\n");
        }
    }
    for &v in map.globals() {
        let s = singles.get(&v).copied().unwrap_or(0.0);
        let _ = writeln!(out, "  n{v} [label=\"{v}\", fillcolor=\"{}\", tooltip=\"{s:+.4}\"];", dot_color(s));
    }
    for &(a, b) in g.edges() {
        let _ = writeln!(out, "  n{} -- n{};", map.global(a), map.global(b));
    }
    out.push_str("}\n");
    out
}
