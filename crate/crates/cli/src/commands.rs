//! Subcommand definitions and handlers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomot_core::evaluation::{factor_scores, run_ablation, summarize_trajectories};
use geomot_core::factorization::{train, Checkpoint, LatentBatch, LossConfig, Priors, SampleSet, TrainConfig};
use geomot_core::graph_priors::{build_emotion_graph, build_identity_graph, GraphConfig, GraphPrior};
use geomot_core::metrics::MetricsReport;
use geomot_core::ot::{fgw_loss, gw_loss, sinkhorn, uniform, FgwConfig, PlanInit, SinkhornConfig};
use geomot_core::splitter::{build_splits, read_jsonl, SplitterConfig};
use geomot_core::synthetic::{build_priors, generate, init_model, verify_bound, ModelShape, SyntheticSpec};
use geomot_core::traversal::{build_trajectory, Strategy, TrajectoryRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{benchmark_train, env_seed, from_value_with_overrides, ExperimentConfig};
use crate::error::{CliResult, StageExt};
use crate::io::{open, read_json, read_lines, read_matrix, write_bytes, write_json};
use crate::pipeline::run_experiment;

#[derive(Debug, Parser)]
#[command(name = "geomot", version, about = "Graph-constrained latent geometry experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Graph priors.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Optimal-transport solvers.
    #[command(subcommand)]
    Ot(OtCommand),
    /// Train the factor heads on a sample set.
    Train(TrainArgs),
    /// Build one trajectory between two graph nodes.
    Traverse(TraverseArgs),
    /// Metrics for trajectories and an encoded batch.
    Eval(EvalArgs),
    /// Leakage-safe train/val/test split of a JSON-lines sample file.
    Split(SplitArgs),
    /// Bound check (or ablation) on the synthetic benchmark.
    Bench(BenchArgs),
    /// The full seeded pipeline.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum GraphCommand {
    Build(GraphBuildArgs),
}

#[derive(Debug, Args)]
pub struct GraphBuildArgs {
    /// Matrix CSV, one point per row.
    #[arg(long)]
    pub input: PathBuf,
    /// One label per line, aligned with the input rows.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = GraphConfig::default().k_neighbors)]
    pub k: usize,
    #[arg(long, default_value_t = GraphConfig::default().n_prototypes)]
    pub prototypes: usize,
    #[arg(long, default_value_t = GraphConfig::default().epsilon_length)]
    pub epsilon_length: f64,
    /// Use every input row as a node instead of clustering into prototypes.
    #[arg(long)]
    pub no_cluster: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Independent,
    Paired,
    Matching,
}

impl From<InitArg> for PlanInit {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Independent => PlanInit::Independent,
            InitArg::Paired => PlanInit::Paired,
            InitArg::Matching => PlanInit::Matching,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = SinkhornConfig::default().entropy_epsilon)]
    pub epsilon: f64,
    /// Sinkhorn iterations.
    #[arg(long, default_value_t = SinkhornConfig::default().max_iterations)]
    pub iters: usize,
    #[arg(long, default_value_t = SinkhornConfig::default().convergence_tol)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl SolverArgs {
    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            entropy_epsilon: self.epsilon,
            max_iterations: self.iters,
            convergence_tol: self.tol,
        }
    }
}

#[derive(Debug, Args)]
pub struct GwArgs {
    /// Source distance matrix CSV.
    #[arg(long)]
    pub source: PathBuf,
    /// Target distance matrix CSV.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = FgwConfig::default().outer_iterations)]
    pub outer: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Independent)]
    pub init: InitArg,
    #[arg(long)]
    pub no_anneal: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl GwArgs {
    fn config(&self, alpha: f64) -> FgwConfig {
        FgwConfig {
            alpha,
            sinkhorn: self.solver.sinkhorn(),
            outer_iterations: self.outer,
            init: self.init.into(),
            anneal: !self.no_anneal,
        }
    }
}

#[derive(Debug, Args)]
pub struct FgwArgs {
    #[command(flatten)]
    pub gw: GwArgs,
    /// Feature cost matrix CSV (source × target).
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long, default_value_t = FgwConfig::default().alpha)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SinkhornArgs {
    /// Cost matrix CSV.
    #[arg(long)]
    pub cost: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Subcommand)]
pub enum OtCommand {
    Gw(GwArgs),
    Fgw(FgwArgs),
    Sinkhorn(SinkhornArgs),
}

/// Contents of `geomot train --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub model: ModelShape,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Seeds head and decoder initialisation.
    pub init_seed: u64,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            model: ModelShape::default(),
            loss: LossConfig::default(),
            train: benchmark_train(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sample set JSON (`z`, `va`, `emotion_labels`, `identity_groups`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub emotion_graph: PathBuf,
    #[arg(long)]
    pub identity_graph: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override of a config entry, e.g. `train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Per-step loss history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Graph,
    Linear,
    Spline,
    Random,
    Full,
}

impl From<StrategyArg> for Strategy {
    fn from(a: StrategyArg) -> Self {
        match a {
            StrategyArg::Graph => Strategy::Graph,
            StrategyArg::Linear => Strategy::Linear,
            StrategyArg::Spline => Strategy::Spline,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Full => Strategy::Full,
        }
    }
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub from: usize,
    #[arg(long)]
    pub to: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Graph)]
    pub strategy: StrategyArg,
    /// Interpolation steps per edge.
    #[arg(long, default_value_t = geomot_core::traversal::DEFAULT_STEPS_PER_EDGE)]
    pub steps: usize,
    /// Latent embedding per node as matrix CSV; the graph's node embeddings by default.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One trajectory or an array of them.
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Encoded batch JSON (`z`, `z_attr`, `z_id`, `va`, `emotion_labels`, `identity_groups`).
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// JSON lines, one sample record per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for `splits.json` and `validation.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of `geomot bench --spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchFile {
    pub synthetic: SyntheticSpec,
    pub graph: GraphConfig,
    pub model: ModelShape,
    pub loss: LossConfig,
    /// `steps = 0` checks the freshly initialised heads.
    pub train: TrainConfig,
    pub sweep: geomot_core::evaluation::SweepConfig,
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for BenchFile {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            graph: GraphConfig::default(),
            model: ModelShape::default(),
            loss: LossConfig::default(),
            train: TrainConfig {
                steps: 0,
                ..benchmark_train()
            },
            sweep: crate::config::benchmark_sweep(),
            n_pairs: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run the three-way ablation instead of the bound check.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config JSON; the shipped defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed; wins over the config and `GEOMOT_SEED`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; wins over the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the effective config (before seed derivation) and exit.
    #[arg(long)]
    pub dry_run: bool,
}

fn load_section<T: Serialize + serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
    overrides: &[String],
) -> CliResult<T> {
    let base = match path {
        Some(p) => read_json::<Value>(p)?,
        None => serde_json::to_value(T::default()).expect("serializable"),
    };
    from_value_with_overrides(base, overrides)
}

fn read_graph(path: &Path) -> CliResult<GraphPrior> {
    GraphPrior::read_json(open(path)?).stage("graph_priors", "read graph")
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Graph(GraphCommand::Build(a)) => graph_build(a),
        Command::Ot(c) => ot(c),
        Command::Train(a) => train_cmd(a),
        Command::Traverse(a) => traverse(a),
        Command::Eval(a) => eval(a),
        Command::Split(a) => split(a),
        Command::Bench(a) => bench(a),
        Command::Run(a) => run(a),
    }
}

fn graph_build(a: GraphBuildArgs) -> CliResult<()> {
    let points = read_matrix(&a.input)?;
    let labels = match &a.labels {
        Some(p) => read_lines(p)?,
        None => (0..points.rows()).map(|i| format!("p{i}")).collect(),
    };
    let cfg = GraphConfig {
        k_neighbors: a.k,
        n_prototypes: a.prototypes,
        epsilon_length: a.epsilon_length,
    };
    let seed = env_seed()?.unwrap_or(a.seed);
    let graph = if a.no_cluster {
        build_identity_graph(&points, &labels, &cfg)
    } else {
        build_emotion_graph(&points, &labels, &cfg, seed)
    }
    .stage("graph_priors", "build")?;
    write_json(&a.out, &graph.to_file())
}

fn ot(c: OtCommand) -> CliResult<()> {
    let (plan, out) = match c {
        OtCommand::Gw(a) => {
            let (d1, d2) = (read_matrix(&a.source)?, read_matrix(&a.target)?);
            (gw_loss(&d1, &d2, &a.config(0.0)).stage("ot_solvers", "gw")?, a.solver.out)
        }
        OtCommand::Fgw(a) => {
            let (d1, d2, m) = (read_matrix(&a.gw.source)?, read_matrix(&a.gw.target)?, read_matrix(&a.cost)?);
            let plan = fgw_loss(&d1, &d2, &m, &a.gw.config(a.alpha)).stage("ot_solvers", "fgw")?;
            (plan, a.gw.solver.out)
        }
        OtCommand::Sinkhorn(a) => {
            let m = read_matrix(&a.cost)?;
            let (p, q) = (uniform(m.rows()), uniform(m.cols()));
            (sinkhorn(&m, &p, &q, &a.solver.sinkhorn()).stage("ot_solvers", "sinkhorn")?, a.solver.out)
        }
    };
    write_json(&out, &plan)
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut file: TrainFile = load_section(a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = env_seed()? {
        file.train.seed = seed;
        file.init_seed = seed;
    }
    let samples: SampleSet = read_json(&a.data)?;
    let priors = Priors {
        emotion: read_graph(&a.emotion_graph)?,
        identity: read_graph(&a.identity_graph)?,
    };
    let (heads, decoder) = init_model(samples.z.cols(), &file.model, file.init_seed).stage("factorization", "init")?;
    let out = train(&samples, &heads, &priors, &decoder, &file.loss, &file.train).stage("factorization", "train")?;
    if let Some(path) = &a.history {
        let mut csv = String::from("step,total,fgw,gw,orthogonality,lipschitz\n");
        for (step, b) in out.history.iter().enumerate() {
            csv.push_str(&format!(
                "{step},{},{},{},{},{}\n",
                b.total, b.fgw, b.gw, b.orthogonality, b.lipschitz
            ));
        }
        write_bytes(path, csv.as_bytes())?;
    }
    Checkpoint::new(&out.heads, &file.loss, &file.train)
        .write_json(&a.out)
        .stage("factorization", "write checkpoint")
}

fn traverse(a: TraverseArgs) -> CliResult<()> {
    let graph = read_graph(&a.graph)?;
    let prototypes = match &a.prototypes {
        Some(p) => read_matrix(p)?,
        None => graph.node_embeddings.clone(),
    };
    let seed = env_seed()?.unwrap_or(a.seed);
    let traj = build_trajectory(&graph, &prototypes, a.from, a.to, a.strategy.into(), a.steps, seed)
        .stage("traversal", "build trajectory")?;
    write_json(&a.out, &traj)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrajectoryInput {
    One(Box<TrajectoryRecord>),
    Many(Vec<TrajectoryRecord>),
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let trajectories = match read_json::<TrajectoryInput>(&a.trajectories)? {
        TrajectoryInput::One(t) => vec![*t],
        TrajectoryInput::Many(v) => v,
    };
    let graph = read_graph(&a.graph)?;
    let batch: LatentBatch = read_json(&a.batch)?;
    let (scores, _) = factor_scores(&batch, &graph).stage("geometry_metrics", "factor scores")?;
    let strategy = trajectories.first().map_or(Strategy::Graph, |t| t.strategy);
    let summary = summarize_trajectories(strategy, &trajectories, &graph).stage("geometry_metrics", "trajectories")?;
    let report = MetricsReport {
        acc: scores.acc,
        id_sim: scores.id_sim,
        auc: scores.auc,
        ts: summary.mean_ts,
        lds: scores.lds,
        gc: summary.mean_gc,
    };
    write_json(&a.out, &report)
}

fn split(a: SplitArgs) -> CliResult<()> {
    let mut cfg: SplitterConfig = load_section(a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    let samples = read_jsonl(open(&a.input)?).stage("dataset_splitter", "read samples")?;
    let assignment = build_splits(&samples, &cfg).stage("dataset_splitter", "split")?;
    write_json(&a.out.join("splits.json"), &assignment)?;
    write_json(&a.out.join("validation.json"), &assignment.validation)
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let mut spec: BenchFile = load_section(a.spec.as_deref(), &a.overrides)?;
    if let Some(seed) = env_seed()? {
        spec.seed = seed;
    }
    let data = generate(&spec.synthetic).stage("synthetic_bench", "generate")?;
    let priors = build_priors(&data, &spec.graph, spec.seed).stage("graph_priors", "build")?;
    let (heads, decoder) =
        init_model(spec.synthetic.shared_dim, &spec.model, spec.seed).stage("factorization", "init")?;
    if a.ablation {
        let report = run_ablation(&data.samples, &heads, &priors, &decoder, &spec.loss, &spec.train, &spec.sweep)
            .stage("synthetic_bench", "ablation")?;
        return write_json(&a.out, &report);
    }
    let heads = if spec.train.steps > 0 {
        train(&data.samples, &heads, &priors, &decoder, &spec.loss, &spec.train)
            .stage("factorization", "train")?
            .heads
    } else {
        heads
    };
    let report = verify_bound(
        &heads,
        &data.samples,
        &priors,
        &decoder,
        spec.loss.target_diameter,
        spec.n_pairs,
        spec.seed,
    )
    .stage("synthetic_bench", "verify bound")?;
    write_json(&a.out, &report)
}

fn run(a: RunArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("serializable"));
        return Ok(());
    }
    let manifest = run_experiment(&cfg)?;
    println!(
        "{} artifacts in {} (config {})",
        manifest.files_written.len(),
        cfg.output_dir.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}
