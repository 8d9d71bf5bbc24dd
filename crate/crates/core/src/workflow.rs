//! Experiment workflow: layered configuration, the on-disk workspace with
//! artifact manifests, and the stages that chain map generation, datasets,
//! training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::discretize::DiscretizeParams;
use crate::eval::{run_trials, sample_trial_pairs, BenchmarkReport, BenchmarkSetup, EvalError};
use crate::gridworld::{
    generate_floorplan, load_map, save_map, FloorplanParams, Footprint, GridError, GridMap,
};
use crate::models::{
    gen_autoencoder_dataset, gen_goal_dataset, gen_policy_dataset, train_autoencoder,
    train_goal_checker, train_policy, Autoencoder, Dataset, GoalChecker, ModelConfig, ModelError,
    Policy, TrainConfig, TrainReport, TrajectoryEndpoints,
};
use crate::pipeline::{GoalMode, PipelineConfig, PipelineError, StrategyRegistry};
use crate::plan::{build_costmap, Costmap, CostmapParams, PlanError};
use crate::render::CameraParams;
use crate::sim::write_trace;
use crate::util::sha256_hex;

/// Environment variable naming the workspace root.
pub const WORKSPACE_ENV: &str = "VISNAV_WORKSPACE";
pub const WORKSPACE_DIRS: [&str; 6] = [
    "maps",
    "datasets",
    "checkpoints",
    "reports",
    "traces",
    "manifests",
];
const LOCK_FILE: &str = ".lock";

pub const MAP_FILE: &str = "maps/map.txt";
pub const AE_DATASET: &str = "datasets/autoencoder.navd";
pub const AE_CHECKPOINT: &str = "checkpoints/autoencoder.navw";
pub const POLICY_DATASET: &str = "datasets/policy.navd";
pub const POLICY_ENDPOINTS: &str = "datasets/policy_endpoints.json";
pub const POLICY_CHECKPOINT: &str = "checkpoints/policy.navw";
pub const GOAL_DATASET: &str = "datasets/goal.navd";
pub const GOAL_CHECKPOINT: &str = "checkpoints/goal_checker.navw";

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the stage that produces it first")]
    MissingArtifact(String),
    #[error("artifact {path} does not match its manifest: expected {expected}, found {found}")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("encoder hash mismatch: {0}")]
    EncoderMismatch(String),
    #[error("workspace {0} is locked by another process (remove {0}/.lock if stale)")]
    Locked(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl WorkflowError {
    /// Validation problems are the operator's to fix; everything else is a
    /// runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            WorkflowError::Config(_)
                | WorkflowError::MissingArtifact(_)
                | WorkflowError::HashMismatch { .. }
                | WorkflowError::EncoderMismatch(_)
                | WorkflowError::Locked(_)
                | WorkflowError::Eval(EvalError::EncoderMismatch { .. })
                | WorkflowError::Model(ModelError::EncoderMismatch { .. })
        )
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub seed: u64,
    pub floorplan: FloorplanParams,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            floorplan: FloorplanParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub ae_images: usize,
    pub policy_trajectories: usize,
    pub goal_pairs: usize,
    /// Minimum start/goal distance for expert trajectories.
    pub min_separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            ae_images: 5000,
            policy_trajectories: 300,
            goal_pairs: 10_000,
            min_separation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub autoencoder: TrainConfig,
    pub policy: TrainConfig,
    pub goal_checker: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            autoencoder: TrainConfig::autoencoder(),
            policy: TrainConfig::policy(),
            goal_checker: TrainConfig::goal_checker(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub trials: usize,
    pub min_separation: f64,
    /// Success radius around the goal.
    pub tolerance: f64,
    pub action_source: String,
    pub write_traces: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            trials: 50,
            min_separation: 1.0,
            tolerance: 0.5,
            action_source: "learned".into(),
            write_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct WorkflowConfig {
    pub environment: EnvironmentConfig,
    pub camera: CameraParams,
    pub costmap: CostmapParams,
    pub discretize: DiscretizeParams,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub pipeline: PipelineConfig,
    pub benchmark: BenchmarkConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Dotted paths of every leaf in `v`.
fn leaf_paths(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) if !t.is_empty() => {
            for (k, v) in t {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaf_paths(v, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn has_path(v: &toml::Value, path: &str) -> bool {
    let mut cur = v;
    for part in path.split('.') {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

/// Parses the value side of a `key=value` override as TOML, falling back to a
/// bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn override_table(key: &str, value: toml::Value) -> toml::Value {
    key.rsplit('.').fold(value, |acc, part| {
        let mut t = toml::Table::new();
        t.insert(part.to_string(), acc);
        toml::Value::Table(t)
    })
}

impl WorkflowConfig {
    /// Defaults, then the file (if any), then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, WorkflowError> {
        let text = match file {
            Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
            None => String::new(),
        };
        Self::from_layers(&text, overrides)
    }

    pub fn from_layers(file_text: &str, overrides: &[String]) -> Result<Self, WorkflowError> {
        let mut user = toml::Value::Table(
            toml::from_str(file_text)
                .map_err(|e| WorkflowError::Config(format!("config file: {e}")))?,
        );
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| WorkflowError::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(str::is_empty) {
                return Err(WorkflowError::Config(format!(
                    "override {o:?} has an empty key"
                )));
            }
            merge(
                &mut user,
                override_table(key, parse_override_value(raw.trim())),
            );
        }
        let mut merged = toml::Value::try_from(Self::default()).expect("defaults serialize");
        merge(&mut merged, user.clone());
        let cfg: Self = merged
            .try_into()
            .map_err(|e| WorkflowError::Config(e.to_string()))?;
        let canonical = toml::Value::try_from(&cfg).expect("config serializes");
        let mut paths = Vec::new();
        leaf_paths(&user, "", &mut paths);
        if let Some(unknown) = paths
            .iter()
            .find(|p| !p.is_empty() && !has_path(&canonical, p))
        {
            return Err(WorkflowError::Config(format!(
                "unknown setting {unknown:?}"
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        self.camera
            .validate()
            .map_err(|e| WorkflowError::Config(e.to_string()))?;
        self.pipeline
            .validate()
            .map_err(|e| WorkflowError::Config(e.to_string()))?;
        if self.costmap.inflation_radius < self.environment.floorplan.footprint_radius {
            return Err(WorkflowError::Config(
                "costmap inflation radius is below the footprint radius".into(),
            ));
        }
        if self.benchmark.trials == 0 || !(self.benchmark.tolerance > 0.0) {
            return Err(WorkflowError::Config(
                "benchmark needs at least one trial and a positive tolerance".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical JSON form; embedded in every produced artifact.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn footprint(&self) -> Result<Footprint, WorkflowError> {
        Ok(Footprint::new(self.environment.floorplan.footprint_radius)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentRef {
    pub path: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub kind: String,
    pub path: String,
    pub content_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub parents: Vec<ParentRef>,
}

/// Exclusive hold on a workspace; released on drop.
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A workspace directory holding all artifacts of one experiment.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkflowError> {
        let root = root.into();
        for d in WORKSPACE_DIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn lock(&self) -> Result<WorkspaceLock, WorkflowError> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(WorkspaceLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(WorkflowError::Locked(self.root.display().to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn manifest_path(&self, rel: &str) -> PathBuf {
        let name = rel.replace('/', "__");
        self.root.join("manifests").join(format!("{name}.json"))
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<String, WorkflowError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        Ok(sha256_hex(bytes))
    }

    /// Writes an artifact and its manifest.
    pub fn publish(
        &self,
        kind: &str,
        rel: &str,
        bytes: &[u8],
        config_hash: &str,
        seed: u64,
        parents: &[ParentRef],
    ) -> Result<ParentRef, WorkflowError> {
        let content_hash = self.write_bytes(rel, bytes)?;
        let manifest = ArtifactManifest {
            kind: kind.into(),
            path: rel.into(),
            content_hash: content_hash.clone(),
            config_hash: config_hash.into(),
            seed,
            parents: parents.to_vec(),
        };
        let mp = self.manifest_path(rel);
        fs::write(
            &mp,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| io_err(&mp, e))?;
        Ok(ParentRef {
            path: rel.into(),
            content_hash,
        })
    }

    pub fn manifest(&self, rel: &str) -> Result<ArtifactManifest, WorkflowError> {
        let mp = self.manifest_path(rel);
        let text = fs::read_to_string(&mp)
            .map_err(|_| WorkflowError::MissingArtifact(format!("{rel} (manifest)")))?;
        serde_json::from_str(&text).map_err(|e| io_err(&mp, e))
    }

    fn check_hash(&self, rel: &str, expected: &str) -> Result<Vec<u8>, WorkflowError> {
        let p = self.path(rel);
        let bytes = fs::read(&p).map_err(|_| WorkflowError::MissingArtifact(rel.into()))?;
        let found = sha256_hex(&bytes);
        if found != expected {
            return Err(WorkflowError::HashMismatch {
                path: rel.into(),
                expected: expected.into(),
                found,
            });
        }
        Ok(bytes)
    }

    /// Reads an artifact after checking it and its parents against the
    /// recorded hashes.
    pub fn consume(&self, rel: &str) -> Result<(Vec<u8>, ParentRef), WorkflowError> {
        let m = self.manifest(rel)?;
        let bytes = self.check_hash(rel, &m.content_hash)?;
        for parent in &m.parents {
            self.check_hash(&parent.path, &parent.content_hash)?;
        }
        Ok((
            bytes,
            ParentRef {
                path: rel.into(),
                content_hash: m.content_hash,
            },
        ))
    }

    /// Writes the machine-readable summary of a stage.
    pub fn write_summary(&self, summary: &StageSummary) -> Result<PathBuf, WorkflowError> {
        let rel = format!("reports/{}.summary.json", summary.stage);
        self.write_bytes(
            &rel,
            serde_json::to_string_pretty(summary)
                .expect("summary serializes")
                .as_bytes(),
        )?;
        Ok(self.path(&rel))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub config_hash: String,
    pub artifacts: Vec<ParentRef>,
    pub metrics: serde_json::Value,
}

/// Receives progress lines.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

fn load_map_artifact(ws: &Workspace) -> Result<(GridMap, ParentRef), WorkflowError> {
    let (bytes, r) = ws.consume(MAP_FILE)?;
    let text = String::from_utf8(bytes).map_err(|e| io_err(&ws.path(MAP_FILE), e))?;
    Ok((GridMap::parse(&text)?, r))
}

fn load_encoder(ws: &Workspace) -> Result<(Autoencoder, String, ParentRef), WorkflowError> {
    let (bytes, r) = ws.consume(AE_CHECKPOINT)?;
    let (ae, _, hash) = Autoencoder::from_bytes(&bytes)?;
    Ok((ae, hash, r))
}

fn dataset_artifact(ws: &Workspace, rel: &str) -> Result<(Dataset, ParentRef), WorkflowError> {
    let (bytes, r) = ws.consume(rel)?;
    Ok((Dataset::from_bytes(&bytes)?, r))
}

fn costmap_for(cfg: &WorkflowConfig, map: &GridMap) -> Result<Costmap, WorkflowError> {
    Ok(build_costmap(map, &cfg.footprint()?, &cfg.costmap)?)
}

fn summary(
    ws: &Workspace,
    stage: &str,
    cfg: &WorkflowConfig,
    artifacts: Vec<ParentRef>,
    metrics: serde_json::Value,
) -> Result<StageSummary, WorkflowError> {
    let s = StageSummary {
        stage: stage.into(),
        config_hash: cfg.hash(),
        artifacts,
        metrics,
    };
    ws.write_summary(&s)?;
    Ok(s)
}

pub fn stage_gen_map(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let map = generate_floorplan(cfg.environment.seed, &cfg.environment.floorplan)?;
    let r = ws.publish(
        "map",
        MAP_FILE,
        map.to_canonical_string().as_bytes(),
        &cfg.hash(),
        cfg.environment.seed,
        &[],
    )?;
    log(&format!(
        "map {}x{} cells at {} m, {} free cells",
        map.width(),
        map.height(),
        map.resolution(),
        map.free_count()
    ));
    summary(
        ws,
        "gen-map",
        cfg,
        vec![r],
        json!({ "width": map.width(), "height": map.height(), "free_cells": map.free_count() }),
    )
}

pub fn stage_gen_ae_data(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (map, map_ref) = load_map_artifact(ws)?;
    let ds = gen_autoencoder_dataset(
        &map,
        &cfg.footprint()?,
        &cfg.camera,
        cfg.data.ae_images,
        &cfg.hash(),
        cfg.data.seed,
    )?;
    let r = ws.publish(
        "dataset",
        AE_DATASET,
        &ds.to_bytes()?,
        &cfg.hash(),
        cfg.data.seed,
        &[map_ref],
    )?;
    log(&format!("autoencoder dataset: {} images", ds.len()));
    summary(
        ws,
        "gen-ae-data",
        cfg,
        vec![r],
        json!({ "records": ds.len() }),
    )
}

fn train_metrics(report: &TrainReport) -> serde_json::Value {
    let best = report.best();
    json!({
        "best_epoch": report.best_epoch,
        "first_test_loss": report.epochs[0].test_loss,
        "best_test_loss": best.test_loss,
        "best_test_accuracy": best.test_accuracy,
        "wall_time_s": report.wall_time_s,
    })
}

fn log_epochs(report: &TrainReport, log: Progress) {
    for e in &report.epochs {
        let acc = e
            .test_accuracy
            .map(|a| format!(" test_acc={a:.4}"))
            .unwrap_or_default();
        log(&format!(
            "epoch {:>3} train_loss={:.6} test_loss={:.6}{acc}",
            e.epoch, e.train_loss, e.test_loss
        ));
    }
    log(&format!(
        "best epoch {} ({:.1}s)",
        report.best_epoch, report.wall_time_s
    ));
}

fn publish_train_report(
    ws: &Workspace,
    name: &str,
    report: &TrainReport,
    cfg: &WorkflowConfig,
    parent: &ParentRef,
) -> Result<ParentRef, WorkflowError> {
    let bytes = serde_json::to_string_pretty(report).expect("report serializes");
    ws.publish(
        "train-report",
        &format!("reports/train-{name}.json"),
        bytes.as_bytes(),
        &cfg.hash(),
        report.seed,
        &[parent.clone()],
    )
}

pub fn stage_train_ae(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (ds, ds_ref) = dataset_artifact(ws, AE_DATASET)?;
    let (ae, mut report) = train_autoencoder(
        &ds,
        &cfg.camera,
        &cfg.model,
        &cfg.training.autoencoder,
        cfg.training.seed,
    )?;
    log_epochs(&report, log);
    report.checkpoint_path = Some(AE_CHECKPOINT.into());
    let r = ws.publish(
        "checkpoint",
        AE_CHECKPOINT,
        &ae.to_bytes(&cfg.hash())?,
        &cfg.hash(),
        cfg.training.seed,
        &[ds_ref],
    )?;
    let rr = publish_train_report(ws, "autoencoder", &report, cfg, &r)?;
    log(&format!("encoder hash {}", r.content_hash));
    summary(ws, "train-ae", cfg, vec![r, rr], train_metrics(&report))
}

pub fn stage_gen_policy_data(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (map, map_ref) = load_map_artifact(ws)?;
    let (ae, enc_hash, enc_ref) = load_encoder(ws)?;
    let fp = cfg.footprint()?;
    let cm = costmap_for(cfg, &map)?;
    let pd = gen_policy_dataset(
        &map,
        &fp,
        &cm,
        &cfg.camera,
        &ae,
        &enc_hash,
        cfg.data.policy_trajectories,
        &cfg.discretize,
        cfg.data.min_separation,
        &cfg.hash(),
        cfg.data.seed,
    )?;
    let parents = [map_ref, enc_ref];
    let r = ws.publish(
        "dataset",
        POLICY_DATASET,
        &pd.dataset.to_bytes()?,
        &cfg.hash(),
        cfg.data.seed,
        &parents,
    )?;
    let endpoints = serde_json::to_string_pretty(&pd.endpoints).expect("endpoints serialize");
    let er = ws.publish(
        "endpoints",
        POLICY_ENDPOINTS,
        endpoints.as_bytes(),
        &cfg.hash(),
        cfg.data.seed,
        &parents,
    )?;
    log(&format!(
        "policy dataset: {} trajectories, {} examples",
        pd.endpoints.len(),
        pd.dataset.len()
    ));
    let counts: Vec<usize> = (0..3)
        .map(|c| {
            pd.dataset
                .labels()
                .iter()
                .filter(|&&l| l as usize == c)
                .count()
        })
        .collect();
    summary(
        ws,
        "gen-policy-data",
        cfg,
        vec![r, er],
        json!({ "trajectories": pd.endpoints.len(), "examples": pd.dataset.len(), "label_counts": counts }),
    )
}

fn check_dataset_encoder(
    ds: &Dataset,
    enc_hash: Option<&str>,
    what: &str,
) -> Result<(), WorkflowError> {
    if let (Some(found), Some(expected)) = (ds.encoder_hash.as_deref(), enc_hash) {
        if found != expected {
            return Err(WorkflowError::EncoderMismatch(format!(
                "{what} was built with encoder {found}, but the current encoder is {expected}"
            )));
        }
    }
    Ok(())
}

fn current_encoder_hash(ws: &Workspace) -> Option<String> {
    ws.manifest(AE_CHECKPOINT).ok().map(|m| m.content_hash)
}

pub fn stage_train_policy(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (ds, ds_ref) = dataset_artifact(ws, POLICY_DATASET)?;
    check_dataset_encoder(
        &ds,
        current_encoder_hash(ws).as_deref(),
        "the policy dataset",
    )?;
    let (policy, mut report) =
        train_policy(&ds, &cfg.model, &cfg.training.policy, cfg.training.seed)?;
    log_epochs(&report, log);
    report.checkpoint_path = Some(POLICY_CHECKPOINT.into());
    let r = ws.publish(
        "checkpoint",
        POLICY_CHECKPOINT,
        &policy.to_bytes(&cfg.hash())?,
        &cfg.hash(),
        cfg.training.seed,
        &[ds_ref],
    )?;
    let rr = publish_train_report(ws, "policy", &report, cfg, &r)?;
    summary(ws, "train-policy", cfg, vec![r, rr], train_metrics(&report))
}

pub fn stage_gen_goal_data(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (map, map_ref) = load_map_artifact(ws)?;
    let (ae, enc_hash, enc_ref) = load_encoder(ws)?;
    let ds = gen_goal_dataset(
        &map,
        &cfg.footprint()?,
        &cfg.camera,
        &ae,
        &enc_hash,
        cfg.data.goal_pairs,
        &cfg.hash(),
        cfg.data.seed,
    )?;
    let r = ws.publish(
        "dataset",
        GOAL_DATASET,
        &ds.to_bytes()?,
        &cfg.hash(),
        cfg.data.seed,
        &[map_ref, enc_ref],
    )?;
    log(&format!("goal dataset: {} pairs", ds.len()));
    summary(
        ws,
        "gen-goal-data",
        cfg,
        vec![r],
        json!({ "records": ds.len() }),
    )
}

pub fn stage_train_goal(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<StageSummary, WorkflowError> {
    let (ds, ds_ref) = dataset_artifact(ws, GOAL_DATASET)?;
    check_dataset_encoder(&ds, current_encoder_hash(ws).as_deref(), "the goal dataset")?;
    let (gc, mut report) = train_goal_checker(
        &ds,
        &cfg.model,
        &cfg.training.goal_checker,
        cfg.training.seed,
    )?;
    log_epochs(&report, log);
    report.checkpoint_path = Some(GOAL_CHECKPOINT.into());
    let r = ws.publish(
        "checkpoint",
        GOAL_CHECKPOINT,
        &gc.to_bytes(&cfg.hash())?,
        &cfg.hash(),
        cfg.training.seed,
        &[ds_ref],
    )?;
    let rr = publish_train_report(ws, "goal-checker", &report, cfg, &r)?;
    summary(ws, "train-goal", cfg, vec![r, rr], train_metrics(&report))
}

/// File stem shared by the report and trace directory of one benchmark run.
pub fn eval_name(action_source: &str, goal_mode: &GoalMode) -> String {
    format!("eval-{action_source}-{}", goal_mode.detector_name())
}

/// Benchmarks `cfg.benchmark.action_source` with the configured goal mode.
/// Only the artifacts the chosen strategies need are loaded.
pub fn stage_eval(
    ws: &Workspace,
    cfg: &WorkflowConfig,
    log: Progress,
) -> Result<(StageSummary, BenchmarkReport), WorkflowError> {
    let registry = StrategyRegistry::default();
    let source = cfg.benchmark.action_source.as_str();
    if !registry.action_source_names().contains(&source) {
        return Err(WorkflowError::Config(format!(
            "unknown action source {source:?}; registered: {}",
            registry.action_source_names().join(", ")
        )));
    }
    let needs_policy = source == "learned";
    let needs_checker = cfg.pipeline.goal_mode == GoalMode::Learned;
    let (map, map_ref) = load_map_artifact(ws)?;
    let mut parents = vec![map_ref];

    let encoder = if needs_policy || needs_checker {
        let (ae, hash, r) = load_encoder(ws)?;
        parents.push(r);
        Some((ae, hash))
    } else {
        None
    };
    let policy = if needs_policy {
        let (bytes, r) = ws.consume(POLICY_CHECKPOINT)?;
        parents.push(r);
        Some(Policy::from_bytes(&bytes)?.0)
    } else {
        None
    };
    let checker = if needs_checker {
        let (bytes, r) = ws.consume(GOAL_CHECKPOINT)?;
        parents.push(r);
        Some(GoalChecker::from_bytes(&bytes)?.0)
    } else {
        None
    };
    if let (Some(p), Some(g)) = (&policy, &checker) {
        if p.encoder_hash != g.encoder_hash {
            return Err(WorkflowError::EncoderMismatch(format!(
                "policy encoder {} != goal checker encoder {}",
                p.encoder_hash, g.encoder_hash
            )));
        }
    }

    let excluded: Vec<(f64, f64)> = match ws.consume(POLICY_ENDPOINTS) {
        Ok((bytes, _)) => serde_json::from_slice::<Vec<TrajectoryEndpoints>>(&bytes)
            .map_err(|e| io_err(&ws.path(POLICY_ENDPOINTS), e))?
            .iter()
            .flat_map(|e| [e.start, e.goal])
            .collect(),
        Err(WorkflowError::MissingArtifact(_)) => Vec::new(),
        Err(e) => return Err(e),
    };

    let fp = cfg.footprint()?;
    let cm = costmap_for(cfg, &map)?;
    let b = &cfg.benchmark;
    let pairs = sample_trial_pairs(&map, &fp, b.trials, b.min_separation, &excluded, b.seed)?;
    let setup = BenchmarkSetup {
        map: &map,
        footprint: fp,
        camera: &cfg.camera,
        costmap: &cm,
        discretize: cfg.discretize,
        encoder: encoder.as_ref().map(|(e, h)| (e, h.as_str())),
        policy: policy.as_ref(),
        goal_checker: checker.as_ref(),
    };
    let out = run_trials(
        &setup,
        &registry,
        source,
        &cfg.pipeline,
        &pairs,
        b.tolerance,
    )?;
    let name = eval_name(source, &cfg.pipeline.goal_mode);
    let config = serde_json::to_value(cfg).expect("config serializes");
    let report = BenchmarkReport::from_results(
        out.iter().map(|(r, _)| r.clone()).collect(),
        source,
        cfg.pipeline.goal_mode.detector_name(),
        b.tolerance,
        b.seed,
        &cfg.hash(),
        config,
    )?;
    for (r, _) in &out {
        log(&format!(
            "trial {:>3} {:<9} success={} steps={} observed={:.2} optimal={:.2}",
            r.index,
            format!("{:?}", r.reason),
            r.success as u8,
            r.steps,
            r.observed_length,
            r.optimal_length
        ));
    }
    if b.write_traces {
        let dir = format!("traces/{name}");
        let _ = fs::remove_dir_all(ws.path(&dir));
        for (r, ep) in &out {
            let mut buf = Vec::new();
            write_trace(&ep.trace, &mut buf).map_err(|e| io_err(&ws.path(&dir), e))?;
            ws.write_bytes(&format!("{dir}/trial_{:04}.jsonl", r.index), &buf)?;
        }
    }
    let json_ref = ws.publish(
        "report",
        &format!("reports/{name}.json"),
        report.to_json().as_bytes(),
        &cfg.hash(),
        b.seed,
        &parents,
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let csv_ref = ws.publish(
        "report",
        &format!("reports/{name}.csv"),
        &csv,
        &cfg.hash(),
        b.seed,
        &parents,
    )?;
    let oor = report
        .oor
        .map(|o| format!("{o:.4}"))
        .unwrap_or_else(|| "n/a".into());
    log(&format!(
        "{name}: trials={} success_rate={:.4} spl={:.4} oor={oor}",
        report.trials, report.success_rate, report.spl
    ));
    let s = summary(
        ws,
        &name,
        cfg,
        vec![json_ref, csv_ref],
        json!({ "trials": report.trials, "success_rate": report.success_rate, "spl": report.spl, "oor": report.oor }),
    )?;
    Ok((s, report))
}

/// Loads a saved map file directly (for plotting).
pub fn read_map_file(path: &Path) -> Result<GridMap, WorkflowError> {
    Ok(load_map(path)?)
}

/// Saves a map outside the manifest system.
pub fn write_map_file(map: &GridMap, path: &Path) -> Result<(), WorkflowError> {
    Ok(save_map(map, path)?)
}
