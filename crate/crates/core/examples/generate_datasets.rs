//! Generates every synthetic dataset and prints its size.
//!
//! `cargo run --example generate_datasets -- [SEED] [OUT_DIR]`
//!
//! With an output directory each dataset is also saved as JSON.

use std::path::PathBuf;

use degree::datasets::{
    gen_ba_community, gen_ba_shapes, gen_special_node, gen_tree_cycles, gen_tree_grid, save_dataset,
    BaCommunityConfig, BaShapesConfig, Dataset, SpecialNodeConfig, TreeMotifConfig,
};
use degree::RngStream;

fn main() -> degree::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out: Option<PathBuf> = args.next().map(PathBuf::from);
    let root = RngStream::new(seed);

    let sets: Vec<(&str, Dataset)> = vec![
        ("ba-shapes", gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?),
        ("ba-community", gen_ba_community(&BaCommunityConfig::default(), &mut root.derive(1))?),
        ("tree-cycles", gen_tree_cycles(&TreeMotifConfig::default(), &mut root.derive(2))?),
        ("tree-grid", gen_tree_grid(&TreeMotifConfig::default(), &mut root.derive(3))?),
        ("special-node", gen_special_node(&SpecialNodeConfig::default(), &mut root.derive(4))?),
    ];

    println!("{:<14} {:>6} {:>7} {:>7} {:>8} {:>10}", "dataset", "graphs", "nodes", "edges", "classes", "gt nodes");
    for (name, ds) in &sets {
        let nodes: usize = ds.graphs.iter().map(|g| g.n()).sum();
        let edges: usize = ds.graphs.iter().map(|g| g.edges().len()).sum();
        let marked: usize = ds
            .graphs
            .iter()
            .filter_map(|g| g.gt_nodes())
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum();
        println!(
            "{name:<14} {:>6} {nodes:>7} {edges:>7} {:>8} {marked:>10}",
            ds.graphs.len(),
            ds.n_classes
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| degree::Error::Validation(e.to_string()))?;
            save_dataset(ds, dir.join(format!("{name}.json")))?;
        }
    }
    Ok(())
}
