//! Command-line front end.
//!
//! Every subcommand that writes files also writes `<artifact>.manifest.json`
//! next to its first artifact. The manifest holds the effective argument list
//! (with any generated seed filled in), so `degree replay` can rebuild the
//! artifacts from it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agglomerate::{agglomerate, to_dot, AgglomerateConfig, SamplerConfig, Selection};
use crate::datasets::{
    gen_ba_community, gen_ba_shapes, gen_special_node, gen_tree_cycles, gen_tree_grid, load_dataset, save_dataset,
    write_atomic, BaCommunityConfig, BaShapesConfig, Dataset, SpecialNodeConfig, Task, TreeMotifConfig,
};
use crate::decompose::{Explainer, GatMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate_explainer, time_explanations, ClassChoice, EvalConfig, Granularity, Timing};
use crate::graph::NodeGroup;
use crate::model::{load_model, save_model, train, Architecture, ConvKind, TrainConfig, TrainedModel};
use crate::rng::RngStream;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "DEGREE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "degree", version, about = "Decomposition-based explanations for graph neural networks")]
pub struct Cli {
    /// Maximum number of worker threads (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a GCN or GAT on a dataset.
    Train(TrainArgs),
    /// Decompose one prediction for a target node group.
    Explain(ExplainArgs),
    /// Build a hierarchical subgraph explanation.
    Agglomerate(AgglomerateArgs),
    /// Score explanations against ground truth with ROC AUC.
    Eval(EvalArgs),
    /// Time per-instance explanations.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    BaShapes,
    BaCommunity,
    TreeCycles,
    TreeGrid,
    SpecialNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchKind {
    Gcn,
    Gat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Feature,
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Node,
    Edge,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Predicted,
    Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Threshold,
    TopFraction,
}

impl From<ModeArg> for GatMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Feature => GatMode::Feature,
            ModeArg::Attention => GatMode::Attention,
        }
    }
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Node => Granularity::Node,
            GranularityArg::Edge => Granularity::Edge,
            GranularityArg::Auto => Granularity::Auto,
        }
    }
}

impl From<ClassArg> for ClassChoice {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Predicted => ClassChoice::Predicted,
            ClassArg::Label => ClassChoice::Label,
        }
    }
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Threshold => Selection::Threshold,
            SelectionArg::TopFraction => Selection::TopFraction,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Random seed; generated and recorded in the manifest when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Random edges added, as a fraction of the unperturbed edge count.
    #[arg(long)]
    pub perturb: Option<f64>,
    /// Number of planted motifs.
    #[arg(long)]
    pub motifs: Option<usize>,
    /// Number of graphs (special-node only).
    #[arg(long)]
    pub graphs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "gcn")]
    pub arch: ArchKind,
    /// Number of message-passing layers.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Defaults to 1000 for GCN and 200 for GAT.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub hidden: usize,
    /// Attention heads (GAT only).
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// Stop once training accuracy reaches this value.
    #[arg(long)]
    pub stop_at_train_acc: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Node index for node tasks, graph index for graph tasks.
    #[arg(long)]
    pub index: usize,
    /// Comma-separated node indices of the target group.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub target: Vec<usize>,
    #[arg(long, value_enum, default_value = "feature")]
    pub mode: ModeArg,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgglomerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub index: usize,
    #[arg(long, default_value_t = 0.6)]
    pub q: f64,
    #[arg(long, value_enum, default_value = "threshold")]
    pub selection: SelectionArg,
    /// Maximum number of levels; defaults to the node count.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub n_walks: usize,
    #[arg(long, default_value_t = 8)]
    pub walk_len: usize,
    /// Context radius; defaults to the model's message-passing depth.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Explained class; defaults to the prediction.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value = "feature")]
    pub mode: ModeArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Tree level drawn as clusters in the DOT output.
    #[arg(long, default_value_t = 2)]
    pub dot_level: usize,
    /// Tree file; printed to stdout when neither output is given.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub granularity: GranularityArg,
    #[arg(long, value_enum, default_value = "feature")]
    pub mode: ModeArg,
    /// Class whose contribution is scored.
    #[arg(long, value_enum, default_value = "predicted")]
    pub class: ClassArg,
    /// Evaluate at most this many instances.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Record per-instance wall time (the report is then not reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model to time; without it a BA-Shapes dataset is generated and a GCN and a GAT are trained.
    #[arg(long, requires = "dataset")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "feature")]
    pub mode: ModeArg,
    /// Instances timed per model.
    #[arg(long, default_value_t = 50)]
    pub limit: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Written beside every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub command: String,
    /// Effective arguments, including any generated seed.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub model: String,
    pub instances: usize,
    pub timing: Timing,
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    }
                }
                _ => {
                    let rendered = e.render().to_string();
                    let first = rendered.lines().next().unwrap_or("error: invalid arguments");
                    eprintln!("{first} (see --help)");
                    1
                }
            };
        }
    };
    // The program name is normalized so manifests do not depend on the install location.
    let strings: Vec<String> = std::iter::once("degree".to_string())
        .chain(argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()))
        .collect();
    match execute(cli, strings) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(n) = cli.threads {
        // A pool may already exist when `run` is called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Explain(a) => cmd_explain(a, argv),
        Command::Agglomerate(a) => cmd_agglomerate(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Bench(a) => cmd_bench(a, argv),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Returns the seed to use, appending it to `argv` when it was generated.
fn resolve_seed(seed: Option<u64>, argv: &mut Vec<String>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        let s = crate::rng::hash_indices(&[nanos as usize, std::process::id() as usize]);
        argv.push("--seed".into());
        argv.push(s.to_string());
        s
    })
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn write_manifest(command: &str, argv: Vec<String>, seed: Option<u64>, artifacts: &[&Path]) -> Result<()> {
    let Some(first) = artifacts.first() else {
        return Ok(());
    };
    let m = Manifest {
        tool: "degree".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: RngStream::new(0).algorithm().into(),
        command: command.into(),
        argv,
        seed,
        artifacts: artifacts.iter().map(|p| p.to_path_buf()).collect(),
    };
    write_json(&manifest_path(first), &m)
}

fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization");
    bytes.push(b'\n');
    bytes
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_pretty(value))
}

fn print_json<T: Serialize>(value: &T) {
    print!("{}", String::from_utf8_lossy(&to_pretty(value)));
}

fn cmd_gen(a: GenArgs, mut argv: Vec<String>) -> Result<()> {
    let seed = resolve_seed(a.seed, &mut argv);
    let mut rng = RngStream::new(seed);
    if a.dataset != DatasetKind::SpecialNode && a.graphs.is_some() {
        return Err(Error::Config("--graphs applies to special-node only".into()));
    }
    if a.dataset == DatasetKind::SpecialNode && (a.motifs.is_some() || a.perturb.is_some()) {
        return Err(Error::Config("special-node takes neither --motifs nor --perturb".into()));
    }
    let shapes = |base: BaShapesConfig| BaShapesConfig {
        motifs: a.motifs.unwrap_or(base.motifs),
        perturb_ratio: a.perturb.unwrap_or(base.perturb_ratio),
        ..base
    };
    let tree = || {
        let base = TreeMotifConfig::default();
        TreeMotifConfig {
            motifs: a.motifs.unwrap_or(base.motifs),
            perturb_ratio: a.perturb.unwrap_or(base.perturb_ratio),
            ..base
        }
    };
    let ds = match a.dataset {
        DatasetKind::BaShapes => gen_ba_shapes(&shapes(BaShapesConfig::default()), &mut rng)?,
        DatasetKind::BaCommunity => {
            let base = BaCommunityConfig::default();
            let cfg = BaCommunityConfig {
                community: shapes(base.community.clone()),
                ..base
            };
            gen_ba_community(&cfg, &mut rng)?
        }
        DatasetKind::TreeCycles => gen_tree_cycles(&tree(), &mut rng)?,
        DatasetKind::TreeGrid => gen_tree_grid(&tree(), &mut rng)?,
        DatasetKind::SpecialNode => {
            let base = SpecialNodeConfig::default();
            let cfg = SpecialNodeConfig {
                n_graphs: a.graphs.unwrap_or(base.n_graphs),
                ..base
            };
            gen_special_node(&cfg, &mut rng)?
        }
    };
    save_dataset(&ds, &a.out)?;
    let nodes: usize = ds.graphs.iter().map(|g| g.n()).sum();
    println!("{} graphs, {nodes} nodes -> {}", ds.graphs.len(), a.out.display());
    write_manifest("gen", argv, Some(seed), &[&a.out])
}

fn cmd_train(a: TrainArgs, mut argv: Vec<String>) -> Result<()> {
    let seed = resolve_seed(a.seed, &mut argv);
    let ds = load_dataset(&a.dataset)?;
    let base = match a.arch {
        ArchKind::Gcn => Architecture::gcn(a.depth),
        ArchKind::Gat => Architecture::gat(a.depth),
    };
    let arch = Architecture {
        hidden: a.hidden,
        heads: a.heads,
        ..base
    };
    let defaults = TrainConfig::for_conv(arch.conv);
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        lr: a.lr,
        stop_at_train_accuracy: a.stop_at_train_acc,
        ..defaults
    };
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let model = train(&arch, &ds, &cfg, &mut RngStream::new(seed))?;
    save_model(&model, &a.out)?;
    if let Some(r) = model.history.last() {
        println!(
            "epoch {} loss {:.4} train {:.3} val {:.3} test {:.3}",
            r.epoch, r.loss, r.train_acc, r.val_acc, r.test_acc
        );
    }
    write_manifest("train", argv, Some(seed), &[&a.out])
}

fn load_pair(model: &Path, dataset: &Path) -> Result<(TrainedModel, Dataset)> {
    let m = load_model(model)?;
    let ds = load_dataset(dataset)?;
    if m.task != ds.task || m.n_classes != ds.n_classes || m.in_dim() != ds.feature_dim() {
        return Err(Error::Validation(format!(
            "model {} does not fit dataset {}",
            model.display(),
            dataset.display()
        )));
    }
    Ok((m, ds))
}

fn instance_explainer<'m>(m: &'m TrainedModel, ds: &Dataset, index: usize, mode: GatMode) -> Result<Explainer<'m>> {
    match ds.task {
        Task::Node => {
            let g = &ds.graphs[0];
            if index >= g.n() {
                return Err(Error::Validation(format!("node {index} out of range for {} nodes", g.n())));
            }
            Explainer::for_node(m, g, index, mode)
        }
        Task::Graph => {
            let g = ds
                .graphs
                .get(index)
                .ok_or_else(|| Error::Validation(format!("graph {index} out of range for {} graphs", ds.graphs.len())))?;
            Explainer::for_graph(m, g, mode)
        }
    }
}

fn cmd_explain(a: ExplainArgs, argv: Vec<String>) -> Result<()> {
    let (m, ds) = load_pair(&a.model, &a.dataset)?;
    let ex = instance_explainer(&m, &ds, a.index, a.mode.into())?;
    let n = match ds.task {
        Task::Node => ds.graphs[0].n(),
        Task::Graph => ds.graphs[a.index].n(),
    };
    if let Some(&v) = a.target.iter().find(|&&v| v >= n) {
        return Err(Error::Validation(format!("target node {v} out of range for {n} nodes")));
    }
    let target = NodeGroup::new(a.target.iter().copied());
    let mut report = ex.decompose(&ex.node_map().to_local(&target))?;
    report.target = target;
    match &a.json {
        Some(path) => {
            write_json(path, &report)?;
            write_manifest("explain", argv, None, &[path])
        }
        None => {
            print_json(&report);
            Ok(())
        }
    }
}

fn cmd_agglomerate(a: AgglomerateArgs, mut argv: Vec<String>) -> Result<()> {
    let seed = resolve_seed(a.seed, &mut argv);
    let (m, ds) = load_pair(&a.model, &a.dataset)?;
    let ex = instance_explainer(&m, &ds, a.index, a.mode.into())?;
    let cls = a.class.unwrap_or_else(|| ex.predicted_class());
    if cls >= m.n_classes {
        return Err(Error::Config(format!("class {cls} out of range for {} classes", m.n_classes)));
    }
    let cfg = AgglomerateConfig {
        q: a.q,
        budget: a.budget,
        selection: a.selection.into(),
        sampler: SamplerConfig {
            n_walks: a.n_walks,
            walk_len: a.walk_len,
            hops: a.hops,
        },
    };
    let tree = agglomerate(&ex, cls, &cfg, &RngStream::new(seed))?;
    let mut written: Vec<&Path> = Vec::new();
    if let Some(path) = &a.json {
        write_json(path, &tree)?;
        written.push(path);
    }
    if let Some(path) = &a.dot {
        write_atomic(path, to_dot(&tree, &ex, a.dot_level).as_bytes())?;
        written.push(path);
    }
    if written.is_empty() {
        print_json(&tree);
    } else {
        let best = tree.best_chain();
        if let Some(top) = best.last() {
            println!(
                "{} levels, {:?}; best group {:?} score {:+.4}",
                tree.levels.len(),
                tree.termination,
                top.group.members(),
                top.score
            );
        }
    }
    write_manifest("agglomerate", argv, Some(seed), &written)
}

fn cmd_eval(a: EvalArgs, argv: Vec<String>) -> Result<()> {
    let (m, ds) = load_pair(&a.model, &a.dataset)?;
    let cfg = EvalConfig {
        mode: a.mode.into(),
        granularity: a.granularity.into(),
        class: a.class.into(),
        timing: a.timing,
        limit: a.limit,
    };
    let report = evaluate_explainer(&m, &ds, &cfg)?;
    let mean = report
        .mean_instance_auc
        .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:?} auc {:.4} (mean per instance {mean}) over {} instances, {} skipped",
        report.granularity,
        report.auc,
        report.instances.len(),
        report.skipped.len()
    );
    if let Some(t) = &report.timing {
        println!("mean {:.4}s max {:.4}s per instance", t.mean_seconds, t.max_seconds);
    }
    match &a.json {
        Some(path) => {
            write_json(path, &report)?;
            write_manifest("eval", argv, None, &[path])
        }
        None => Ok(()),
    }
}

fn cmd_bench(a: BenchArgs, mut argv: Vec<String>) -> Result<()> {
    let mode: GatMode = a.mode.into();
    let mut rows = Vec::new();
    let mut seed = None;
    let mut push = |dataset: String, model: String, m: &TrainedModel, ds: &Dataset| -> Result<()> {
        let timing = time_explanations(m, ds, mode, a.limit)?;
        let instances = crate::eval::instances(ds, Granularity::Auto)?.len().min(a.limit);
        println!(
            "{dataset:<16} {model:<8} {instances:>5} instances  mean {:.4}s  max {:.4}s",
            timing.mean_seconds, timing.max_seconds
        );
        rows.push(BenchRow {
            dataset,
            model,
            instances,
            timing,
        });
        Ok(())
    };
    match (&a.model, &a.dataset) {
        (Some(mp), Some(dp)) => {
            let (m, ds) = load_pair(mp, dp)?;
            push(dp.display().to_string(), mp.display().to_string(), &m, &ds)?;
        }
        _ => {
            let s = resolve_seed(a.seed, &mut argv);
            seed = Some(s);
            let root = RngStream::new(s);
            let ds = gen_ba_shapes(&BaShapesConfig::default(), &mut root.derive(0))?;
            for (k, conv) in [ConvKind::Gcn, ConvKind::Gat].into_iter().enumerate() {
                let arch = match conv {
                    ConvKind::Gcn => Architecture::gcn(3),
                    ConvKind::Gat => Architecture::gat(3),
                };
                let m = train(&arch, &ds, &TrainConfig::for_conv(conv), &mut root.derive(1 + k as u64))?;
                push("ba-shapes".into(), format!("{conv:?}").to_lowercase(), &m, &ds)?;
            }
        }
    }
    match &a.json {
        Some(path) => {
            write_json(path, &rows)?;
            write_manifest("bench", argv, seed, &[path])
        }
        None => Ok(()),
    }
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.manifest.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if m.argv.get(1).map(String::as_str) == Some("replay") {
        return Err(Error::Validation("a manifest cannot replay another replay".into()));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    let cli = Cli::try_parse_from(&m.argv)
        .map_err(|e| Error::Validation(format!("manifest arguments do not parse: {}", e.kind())))?;
    execute(cli, m.argv)
}
