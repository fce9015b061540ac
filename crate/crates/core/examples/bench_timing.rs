//! Mean and worst per-instance explanation time for GCN and GAT on BA-Shapes.
//!
//! `cargo run --release --example bench_timing -- [INSTANCES]`

use degree::datasets::{gen_ba_shapes, BaShapesConfig};
use degree::decompose::GatMode;
use degree::eval::time_explanations;
use degree::model::{train, Architecture, TrainConfig};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let limit: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let root = RngStream::new(0);
    let ds = gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?;
    for (name, arch) in [("GCN", Architecture::gcn(3)), ("GAT", Architecture::gat(3))] {
        let m = train(&arch, &ds, &TrainConfig::for_conv(arch.conv), &mut root.derive(1))?;
        for mode in [GatMode::Feature, GatMode::Attention] {
            if name == "GCN" && mode == GatMode::Attention {
                continue;
            }
            let t = time_explanations(&m, &ds, mode, limit)?;
            println!(
                "{name} {mode:?}: mean {:.4}s, max {:.4}s over {limit} instances",
                t.mean_seconds, t.max_seconds
            );
        }
    }
    Ok(())
}
