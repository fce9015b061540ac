//! Builds the explanation tree for one node and writes it as Graphviz DOT.
//!
//! `cargo run --release --example agglomerate_subgraph -- [NODE] [OUT.dot]`
//!
//! Render with `dot -Tsvg OUT.dot > OUT.svg`.

use degree::agglomerate::{agglomerate, to_dot, AgglomerateConfig};
use degree::datasets::{gen_ba_shapes, BaShapesConfig};
use degree::decompose::{Explainer, GatMode};
use degree::model::{train, Architecture, TrainConfig};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let mut args = std::env::args().skip(1);
    let node: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let out = args.next();
    let root = RngStream::new(0);
    let ds = gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?;
    let g = &ds.graphs[0];
    let m = train(&Architecture::gcn(3), &ds, &TrainConfig::default(), &mut root.derive(1))?;

    let ex = Explainer::for_node(&m, g, node, GatMode::Feature)?;
    let cls = ex.predicted_class();
    let tree = agglomerate(&ex, cls, &AgglomerateConfig::default(), &root.derive(2))?;
    tree.validate()?;

    let gt = g.gt_nodes().expect("node ground truth");
    println!("{} levels, {:?}", tree.levels.len(), tree.termination);
    for (l, level) in tree.levels.iter().enumerate().take(4) {
        println!("level {}:", l + 1);
        for t in level {
            let motif = t.group.iter().filter(|&v| gt[v]).count();
            println!("  {:+.4} {:?} ({motif} motif nodes)", t.score, t.group.members());
        }
    }
    let dot = to_dot(&tree, &ex, 2);
    match out {
        Some(path) => degree::datasets::write_atomic(path.as_ref(), dot.as_bytes())?,
        None => print!("{dot}"),
    }
    Ok(())
}
