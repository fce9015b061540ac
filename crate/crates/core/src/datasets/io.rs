use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    task: Task,
    n_classes: usize,
    graphs: Vec<GraphRecord>,
    split: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    features: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_nodes: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_edges: Option<Vec<bool>>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        GraphRecord {
            n: g.n(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            features: g.features().clone(),
            node_labels: g.node_labels().map(<[usize]>::to_vec),
            graph_label: g.graph_label(),
            gt_nodes: g.gt_nodes().map(<[bool]>::to_vec),
            gt_edges: g.gt_edges().map(<[bool]>::to_vec),
        }
    }
}

impl GraphRecord {
    fn into_graph(self, k: usize) -> Result<Graph> {
        let context = |e: Error| match e {
            Error::Validation(msg) => Error::Validation(format!("graph {k}: {msg}")),
            other => other,
        };
        // A graph with nodes but zero feature columns serializes as empty rows,
        // which parse back as the right shape; an empty list means n = 0.
        let features = if self.features.rows() == 0 && self.n > 0 {
            Matrix::zeros(self.n, 0)
        } else {
            self.features
        };
        let edges = self.edges.into_iter().map(|[u, v]| (u, v)).collect();
        let mut g = Graph::new(self.n, edges, features).map_err(context)?;
        if let Some(l) = self.node_labels {
            g = g.with_node_labels(l).map_err(context)?;
        }
        if let Some(l) = self.graph_label {
            g = g.with_graph_label(l);
        }
        g.with_ground_truth(self.gt_nodes, self.gt_edges)
            .map_err(context)
    }
}

pub(crate) fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(value).expect("in-memory JSON serialization");
    bytes.push(b'\n');
    bytes
}

pub(crate) fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let file = DatasetFile {
        task: ds.task,
        n_classes: ds.n_classes,
        graphs: ds.graphs.iter().map(GraphRecord::from).collect(),
        split: ds.split.clone(),
    };
    write_atomic(path.as_ref(), &to_json_bytes(&file))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&read_text(path)?, path)
}

/// Parses dataset JSON; `origin` is only used in error messages.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Dataset> {
    let file: DatasetFile = parse_json(text, origin)?;
    let graphs = file
        .graphs
        .into_iter()
        .enumerate()
        .map(|(k, r)| r.into_graph(k))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(file.task, file.n_classes, graphs, file.split)
}
