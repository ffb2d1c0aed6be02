use std::path::{Path, PathBuf};

use geomot_cli::config::{apply_override, derive_seed, from_value_with_overrides, ExperimentConfig};
use geomot_cli::CliError;
use serde_json::{json, Value};

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

#[test]
fn shipped_config_is_the_default() {
    let text = std::fs::read_to_string(shipped_config()).unwrap();
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    cfg.validate().unwrap();
    assert_eq!(cfg.train.learning_rate, 1e-3);
    assert_eq!(cfg.train.steps, 2000);
    assert_eq!(cfg.sweep.steps_per_edge, 1);
}

#[test]
fn overrides_reach_nested_keys() {
    let mut v = json!({"train": {"steps": 10}});
    apply_override(&mut v, "train.steps=25").unwrap();
    apply_override(&mut v, "train.learning_rate=0.5").unwrap();
    apply_override(&mut v, "output_dir=runs/x").unwrap();
    apply_override(&mut v, "loss.fgw.init=\"paired\"").unwrap();
    assert_eq!(v["train"]["steps"], json!(25));
    assert_eq!(v["train"]["learning_rate"], json!(0.5));
    assert_eq!(v["output_dir"], json!("runs/x"));
    assert_eq!(v["loss"]["fgw"]["init"], json!("paired"));
}

#[test]
fn malformed_overrides_are_config_errors() {
    let mut v = json!({"seed": 1});
    for bad in ["seed", "=3", "seed.inner=2"] {
        assert!(matches!(apply_override(&mut v, bad), Err(CliError::Config(_))), "{bad}");
    }
}

#[test]
fn later_overrides_win() {
    let base = serde_json::to_value(ExperimentConfig::default()).unwrap();
    let cfg: ExperimentConfig =
        from_value_with_overrides(base, &["seed=4".into(), "seed=9".into(), "train.steps=3".into()]).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.train.steps, 3);
}

#[test]
fn seed_is_required_and_unknown_sections_rejected() {
    let missing: Result<ExperimentConfig, _> = from_value_with_overrides(json!({}), &[]);
    assert!(matches!(missing, Err(CliError::Config(_))));
    let unknown: Result<ExperimentConfig, _> = from_value_with_overrides(json!({"seed": 0, "trian": {}}), &[]);
    assert!(matches!(unknown, Err(CliError::Config(_))));
    let minimal: ExperimentConfig = from_value_with_overrides(json!({"seed": 3}), &[]).unwrap();
    assert_eq!(minimal, ExperimentConfig { seed: 3, ..ExperimentConfig::default() });
}

#[test]
fn invalid_sections_name_their_module() {
    let mut cfg = ExperimentConfig::default();
    cfg.splitter.ratios = [0.5, 0.5, 0.5];
    match cfg.validate() {
        Err(CliError::Stage { module, stage, .. }) => assert_eq!((module, stage), ("dataset_splitter", "config")),
        other => panic!("{other:?}"),
    }
    let mut cfg = ExperimentConfig::default();
    cfg.loss.lambda_perp = -1.0;
    let msg = cfg.validate().unwrap_err().to_string();
    assert!(msg.starts_with("[factorization] config"), "{msg}");
}

#[test]
fn module_seeds_derive_from_the_root_seed_only() {
    let a = ExperimentConfig { seed: 5, ..ExperimentConfig::default() };
    let mut b = a.clone();
    b.synthetic.seed = 999;
    b.train.seed = 123;
    assert_eq!(a.resolve(), b.resolve());
    let r = a.resolve();
    assert_eq!(r.synthetic.seed, derive_seed(5, "synthetic_bench"));
    let seeds = [r.synthetic.seed, r.train.seed, r.splitter.seed, r.sweep.seed, a.graph_seed(), a.model_seed(), a.bound_seed()];
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), seeds.len());
    assert_ne!(derive_seed(5, "traversal"), derive_seed(6, "traversal"));
    assert_eq!(r.resolve(), r);
}

#[test]
fn hash_tracks_the_experiment_not_the_output_location() {
    let a = ExperimentConfig::default();
    let moved = ExperimentConfig {
        output_dir: "elsewhere".into(),
        ..a.clone()
    };
    assert_eq!(a.hash(), moved.hash());
    assert_eq!(a.hash().len(), 64);
    let reseeded = ExperimentConfig { seed: 1, ..a.clone() };
    assert_ne!(a.hash(), reseeded.hash());
    let mut faster = a.clone();
    faster.train.learning_rate = 2e-3;
    assert_ne!(a.hash(), faster.hash());
}

#[test]
fn loading_without_a_file_uses_defaults() {
    // GEOMOT_SEED is exercised against the binary, where the environment is per process.
    if std::env::var_os("GEOMOT_SEED").is_some() {
        return;
    }
    let cfg = ExperimentConfig::load(None, &["train.steps=7".into()]).unwrap();
    assert_eq!(cfg.train.steps, 7);
    assert_eq!(cfg.seed, 0);
    assert!(ExperimentConfig::load(Some(Path::new("/nonexistent/geomot.json")), &[]).is_err());
    let v: Value = serde_json::to_value(&cfg).unwrap();
    assert!(v.get("bound").is_some());
}
