//! Splits one node's logits into the contribution of a target group and the
//! rest, then ranks single nodes by their contribution.
//!
//! `cargo run --release --example decompose_prediction -- [NODE]`

use degree::datasets::{gen_ba_shapes, BaShapesConfig};
use degree::decompose::{Explainer, GatMode};
use degree::model::{train, Architecture, TrainConfig};
use degree::{NodeGroup, RngStream};

fn main() -> degree::Result<()> {
    let node: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let root = RngStream::new(0);
    let ds = gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?;
    let g = &ds.graphs[0];
    let m = train(&Architecture::gcn(3), &ds, &TrainConfig::default(), &mut root.derive(1))?;

    let ex = Explainer::for_node(&m, g, node, GatMode::Feature)?;
    let map = ex.node_map();
    let cls = ex.predicted_class();
    println!(
        "node {node}: label {:?}, predicted {cls}; computation graph has {} nodes",
        g.node_labels().map(|l| l[node]),
        ex.graph().n()
    );

    // The house this node belongs to, as the target group.
    let gt = g.gt_nodes().expect("BA-Shapes has node ground truth");
    let house: Vec<usize> = map.globals().iter().copied().filter(|&v| gt[v]).collect();
    let report = ex.decompose(&map.to_local(&NodeGroup::new(house.iter().copied())))?;
    println!("target {house:?}");
    println!("{:>6} {:>10} {:>10} {:>10}", "class", "target", "rest", "logit");
    for c in 0..report.logits.len() {
        println!(
            "{c:>6} {:>10.4} {:>10.4} {:>10.4}",
            report.gamma[c], report.beta[c], report.logits[c]
        );
    }
    println!("completeness error {:.1e}", report.completeness_error());

    let scores = ex.node_scores(cls)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    println!("top nodes for class {cls}:");
    for &i in order.iter().take(8) {
        let v = map.global(i);
        println!("  {v:>4} {:+.4}{}", scores[i], if gt[v] { "  (motif)" } else { "" });
    }
    Ok(())
}
