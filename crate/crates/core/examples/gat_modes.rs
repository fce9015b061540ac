//! Compares the two ways of decomposing attention layers on a trained GAT.
//!
//! `cargo run --release --example gat_modes`

use degree::datasets::{gen_ba_shapes, BaShapesConfig};
use degree::decompose::GatMode;
use degree::eval::{evaluate_explainer, EvalConfig, Granularity};
use degree::model::{train, Architecture, TrainConfig};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let root = RngStream::new(0);
    let ds = gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?;
    let arch = Architecture::gat(3);
    let m = train(&arch, &ds, &TrainConfig::for_conv(arch.conv), &mut root.derive(1))?;
    if let Some(r) = m.history.last() {
        println!("GAT test accuracy {:.3} after {} epochs", r.test_acc, r.epoch);
    }
    for mode in [GatMode::Feature, GatMode::Attention] {
        let report = evaluate_explainer(
            &m,
            &ds,
            &EvalConfig {
                mode,
                granularity: Granularity::Edge,
                ..Default::default()
            },
        )?;
        println!("{mode:?}: edge AUC {:.4} over {} instances", report.auc, report.instances.len());
    }
    Ok(())
}
