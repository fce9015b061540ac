//! Trains a detector for graphs that contain one special node, then checks
//! that the top-scoring node is that node.
//!
//! `cargo run --release --example special_node`

use degree::datasets::{gen_special_node, SpecialNodeConfig};
use degree::decompose::GatMode;
use degree::eval::top1_localization;
use degree::model::{train, Architecture, TrainConfig};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let root = RngStream::new(0);
    let ds = gen_special_node(&SpecialNodeConfig::default(), &mut root.derive(0))?;
    let cfg = TrainConfig {
        epochs: 5000,
        stop_at_train_accuracy: Some(1.0),
        ..Default::default()
    };
    let m = train(&Architecture::gcn(3), &ds, &cfg, &mut root.derive(1))?;
    if let Some(r) = m.history.last() {
        println!("detector: train {:.2} test {:.2} after {} epochs", r.train_acc, r.test_acc, r.epoch);
    }
    let loc = top1_localization(&m, &ds, GatMode::Feature)?;
    println!("top-1 node is the special node in {}/{} graphs", loc.hits, loc.total);
    Ok(())
}
