//! The end-to-end experiment: generate → graphs → train → traverse → eval → split →
//! bound, with every artifact recorded in a manifest.

use std::path::PathBuf;

use geomot_core::evaluation::{endpoint_pairs, factor_scores, sweep, StrategySummary};
use geomot_core::factorization::{train, Checkpoint, LatentBatch, LossBreakdown};
use geomot_core::graph_priors::GraphFile;
use geomot_core::metrics::MetricsReport;
use geomot_core::splitter::build_splits;
use geomot_core::synthetic::{build_priors, generate, init_model, sample_records, verify_bound};
use geomot_core::traversal::{Strategy, TrajectoryRecord};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{CliResult, StageExt};
use crate::io::{to_json_bytes, write_bytes};

pub const GRAPHS_FILE: &str = "graphs.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const BOUND_FILE: &str = "bound.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphsArtifact {
    pub emotion: GraphFile,
    pub identity: GraphFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoriesArtifact {
    pub pairs: Vec<(usize, usize)>,
    pub strategies: Vec<StrategySummary>,
    pub trajectories: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    /// Relative to the output directory.
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// The config with module seeds resolved.
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
    /// Every file the run wrote, the manifest included.
    pub files_written: Vec<String>,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
}

impl Manifest {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

struct Writer {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Writer {
    fn emit<T: Serialize>(&mut self, name: &str, file: &str, value: &T) -> CliResult<()> {
        let bytes = to_json_bytes(value);
        write_bytes(&self.dir.join(file), &bytes)?;
        self.entries.push(ArtifactEntry {
            name: name.to_string(),
            file: file.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

/// Runs the whole pipeline and writes its artifacts under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    cfg.validate()?;
    let r = cfg.resolve();
    let mut out = Writer {
        dir: r.output_dir.clone(),
        entries: Vec::new(),
    };

    let data = generate(&r.synthetic).stage("synthetic_bench", "generate")?;

    let priors = build_priors(&data, &r.graph, r.graph_seed()).stage("graph_priors", "build")?;
    let graphs = GraphsArtifact {
        emotion: priors.emotion.to_file(),
        identity: priors.identity.to_file(),
    };
    out.emit("graphs", GRAPHS_FILE, &graphs)?;

    let (heads, decoder) =
        init_model(r.synthetic.shared_dim, &r.model, r.model_seed()).stage("factorization", "init")?;
    let trained = train(&data.samples, &heads, &priors, &decoder, &r.loss, &r.train).stage("factorization", "train")?;
    out.emit("checkpoint", CHECKPOINT_FILE, &Checkpoint::new(&trained.heads, &r.loss, &r.train))?;

    let latent = LatentBatch::encode(&data.samples, &trained.heads).stage("factorization", "encode")?;
    let (scores, prototypes) = factor_scores(&latent, &priors.emotion).stage("geometry_metrics", "factor scores")?;
    let pairs = endpoint_pairs(&priors.emotion, r.sweep.min_hops, r.sweep.max_pairs, r.sweep.seed)
        .stage("traversal", "endpoint pairs")?;
    let (trajectories, strategies) =
        sweep(&priors.emotion, &prototypes, &pairs, &r.sweep).stage("traversal", "sweep")?;
    let headline = strategies
        .iter()
        .find(|s| s.strategy == Strategy::Graph)
        .unwrap_or(&strategies[0]);
    let metrics = MetricsReport {
        acc: scores.acc,
        id_sim: scores.id_sim,
        auc: scores.auc,
        ts: headline.mean_ts,
        lds: scores.lds,
        gc: headline.mean_gc,
    };
    out.emit(
        "trajectories",
        TRAJECTORIES_FILE,
        &TrajectoriesArtifact {
            pairs,
            strategies,
            trajectories,
        },
    )?;
    out.emit("metrics", METRICS_FILE, &metrics)?;

    let records = sample_records(&data, r.modality_noise, r.splitter.seed).stage("dataset_splitter", "records")?;
    let splits = build_splits(&records, &r.splitter).stage("dataset_splitter", "split")?;
    out.emit("splits", SPLITS_FILE, &splits)?;

    let bound = verify_bound(
        &trained.heads,
        &data.samples,
        &priors,
        &decoder,
        r.loss.target_diameter,
        r.bound.n_pairs,
        r.bound_seed(),
    )
    .stage("synthetic_bench", "verify bound")?;
    out.emit("bound", BOUND_FILE, &bound)?;

    let mut files_written: Vec<String> = out.entries.iter().map(|e| e.file.clone()).collect();
    files_written.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: r.clone(),
        artifacts: out.entries,
        files_written,
        initial_loss: trained.initial_eval,
        final_loss: trained.final_eval,
    };
    write_bytes(&r.output_dir.join(MANIFEST_FILE), &to_json_bytes(&manifest))?;
    Ok(manifest)
}

