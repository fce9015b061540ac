//! Trains a GCN (or GAT) on BA-Shapes and prints the accuracy history.
//!
//! `cargo run --release --example train_model -- [gcn|gat] [PERTURB]`

use degree::datasets::{gen_ba_shapes, BaShapesConfig, Split};
use degree::model::{accuracy, train, Architecture, ConvKind, TrainConfig};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let mut args = std::env::args().skip(1);
    let arch = match args.next().as_deref() {
        Some("gat") => Architecture::gat(3),
        _ => Architecture::gcn(3),
    };
    let perturb: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.10);
    let root = RngStream::new(0);
    let ds = gen_ba_shapes(
        &BaShapesConfig {
            perturb_ratio: perturb,
            ..Default::default()
        },
        &mut root.derive(0),
    )?;
    let cfg = TrainConfig::for_conv(arch.conv);
    println!(
        "{} on BA-Shapes ({} nodes, perturbation {perturb}), {} epochs at lr {}",
        if arch.conv == ConvKind::Gcn { "GCN" } else { "GAT" },
        ds.graphs[0].n(),
        cfg.epochs,
        cfg.lr
    );
    let m = train(&arch, &ds, &cfg, &mut root.derive(1))?;
    println!("{:>6} {:>8} {:>6} {:>6} {:>6}", "epoch", "loss", "train", "val", "test");
    for r in &m.history {
        println!(
            "{:>6} {:>8.4} {:>6.3} {:>6.3} {:>6.3}",
            r.epoch, r.loss, r.train_acc, r.val_acc, r.test_acc
        );
    }
    println!("final test accuracy {:.3}", accuracy(&m, &ds, Split::Test)?);
    Ok(())
}
