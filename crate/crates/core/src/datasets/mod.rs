//! Benchmark datasets: synthetic generators with planted ground truth and a
//! JSON file format for externally supplied graph collections.

mod generators;
pub(crate) mod io;

pub use generators::{
    gen_ba_community, gen_ba_shapes, gen_special_node, gen_tree_cycles, gen_tree_grid,
    BaCommunityConfig, BaShapesConfig, SpecialNodeConfig, TreeMotifConfig, HOUSE_EDGES,
};
pub use io::{load_dataset, parse_dataset, save_dataset, write_atomic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A node-classification dataset holds one graph and splits its nodes; a
/// graph-classification dataset splits its graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub n_classes: usize,
    pub graphs: Vec<Graph>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn new(task: Task, n_classes: usize, graphs: Vec<Graph>, split: Vec<Split>) -> Result<Self> {
        let ds = Dataset {
            task,
            n_classes,
            graphs,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Number of split units: nodes of the single graph, or graphs.
    pub fn units(&self) -> usize {
        match self.task {
            Task::Node => self.graphs.first().map_or(0, Graph::n),
            Task::Graph => self.graphs.len(),
        }
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.features().cols())
    }

    /// Label of split unit `i`.
    pub fn label(&self, i: usize) -> Option<usize> {
        match self.task {
            Task::Node => self.graphs[0].node_labels().map(|l| l[i]),
            Task::Graph => self.graphs[i].graph_label(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Validation("n_classes must be positive".into()));
        }
        if self.task == Task::Node && self.graphs.len() != 1 {
            return Err(Error::Validation(format!(
                "node-classification datasets hold exactly one graph, found {}",
                self.graphs.len()
            )));
        }
        if self.split.len() != self.units() {
            return Err(Error::Validation(format!(
                "split has {} entries but the dataset has {} {}",
                self.split.len(),
                self.units(),
                match self.task {
                    Task::Node => "nodes",
                    Task::Graph => "graphs",
                }
            )));
        }
        let dim = self.feature_dim();
        for (k, g) in self.graphs.iter().enumerate() {
            if g.features().cols() != dim {
                return Err(Error::Validation(format!(
                    "graph {k} has feature dimension {} but graph 0 has {dim}",
                    g.features().cols()
                )));
            }
            let graph_label = g.graph_label();
            let labels = g.node_labels().into_iter().flatten().chain(graph_label.as_ref());
            for &l in labels {
                if l >= self.n_classes {
                    return Err(Error::Validation(format!(
                        "graph {k} has label {l} outside [0, {})",
                        self.n_classes
                    )));
                }
            }
            if self.task == Task::Graph && g.graph_label().is_none() {
                return Err(Error::Validation(format!("graph {k} has no graph label")));
            }
        }
        if self.task == Task::Node && self.graphs[0].node_labels().is_none() {
            return Err(Error::Validation("node-classification graph has no node labels".into()));
        }
        Ok(())
    }
}

/// Random 80/10/10 assignment of `units` items.
pub fn random_split(units: usize, rng: &mut RngStream) -> Vec<Split> {
    let mut order: Vec<usize> = (0..units).collect();
    rng.shuffle(&mut order);
    let n_train = (0.8 * units as f64).round() as usize;
    let n_val = (0.1 * units as f64).round() as usize;
    let mut split = vec![Split::Test; units];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            split[i] = Split::Train;
        } else if rank < n_train + n_val {
            split[i] = Split::Val;
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_fractions() {
        let mut rng = RngStream::new(0);
        let s = random_split(700, &mut rng);
        let count = |w| s.iter().filter(|&&x| x == w).count();
        assert_eq!(count(Split::Train), 560);
        assert_eq!(count(Split::Val), 70);
        assert_eq!(count(Split::Test), 70);
    }
}
