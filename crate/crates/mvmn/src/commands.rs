//! Library-level implementations of the CLI subcommands. The binary only
//! parses arguments and forwards here, so every workflow is equally usable
//! from Rust code (see the examples directory).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::Serialize;

use crate::analysis::{self, AnalysisReport, WindowMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::gradcheck::{self, GroupReport};
use crate::ingest::{
    preprocess_files, ActivityFilter, CandidateSet, CheckinFormat, PreprocessConfig, RegionFilter,
};
use crate::manifest::RunManifest;
use crate::model::{score_pair, ModelConfig};
use crate::synth::{generate_to_files, SynthConfig};
use crate::train::{train_with_progress, Checkpoint};
use crate::types::Real;

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

pub struct PreprocessCommand {
    pub checkins: PathBuf,
    pub edges: PathBuf,
    pub format: CheckinFormat,
    pub bbox: String,
    pub min_fraction: f64,
    pub min_friends: usize,
    pub min_checkins: usize,
    pub k_max: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub out_candidates: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct PreprocessSummary {
    pub users: usize,
    pub locations: usize,
    pub checkins: usize,
    pub train_edges: usize,
    pub val_edges: usize,
    pub test_edges: usize,
    pub test_pairs: usize,
    pub dropped_region: usize,
    pub dropped_activity: usize,
    pub candidates_path: PathBuf,
}

/// Default candidates path: `data.jsonl` -> `data.candidates.json`.
pub fn default_candidates_path(out: &Path) -> PathBuf {
    out.with_extension("candidates.json")
}

pub fn run_preprocess(cmd: &PreprocessCommand) -> Result<PreprocessSummary> {
    let region = RegionFilter::parse(&cmd.bbox, cmd.min_fraction)?;
    let config = PreprocessConfig {
        format: cmd.format,
        region,
        activity: ActivityFilter {
            min_friends: cmd.min_friends,
            min_checkins: cmd.min_checkins,
        },
        k_max: cmd.k_max,
        seed: cmd.seed,
        ..PreprocessConfig::default()
    };
    let manifest = RunManifest::start("preprocess", to_json(&config), cmd.seed)
        .input(&cmd.checkins)?
        .input(&cmd.edges)?;
    let out = preprocess_files(&cmd.checkins, &cmd.edges, &config)?;
    out.dataset.save(&cmd.out)?;
    let candidates_path = cmd
        .out_candidates
        .clone()
        .unwrap_or_else(|| default_candidates_path(&cmd.out));
    out.candidates.save(&candidates_path)?;
    manifest.write(&cmd.out)?;
    Ok(PreprocessSummary {
        users: out.dataset.num_users(),
        locations: out.dataset.num_locations(),
        checkins: out.dataset.trajectories.iter().map(|t| t.len()).sum(),
        train_edges: out.dataset.train_edges.len(),
        val_edges: out.dataset.val_edges.len(),
        test_edges: out.dataset.test_edges.len(),
        test_pairs: out.candidates.num_pairs(),
        dropped_region: out.dropped_region,
        dropped_activity: out.dropped_activity,
        candidates_path,
    })
}

pub struct AnalyzeCommand {
    pub data: PathBuf,
    pub out: PathBuf,
    pub window_hours: Real,
    pub mode: WindowMode,
    pub seed: u64,
}

pub fn run_analyze(cmd: &AnalyzeCommand) -> Result<AnalysisReport> {
    let manifest = RunManifest::start(
        "analyze",
        serde_json::json!({
            "window_hours": cmd.window_hours,
            "mode": cmd.mode,
            "seed": cmd.seed,
        }),
        cmd.seed,
    )
    .input(&cmd.data)?;
    let dataset = Dataset::load(&cmd.data)?;
    let report = analysis::analyze(&dataset, cmd.window_hours, cmd.mode, cmd.seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&cmd.out, json + "\n")
        .map_err(|e| Error::io(cmd.out.display().to_string(), e))?;
    manifest.write(&cmd.out)?;
    Ok(report)
}

pub struct TrainCommand {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: ModelConfig,
    /// When unset, the dataset's stored maximum length is used.
    pub k_max: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_auc: Option<Real>,
}

pub fn run_train(cmd: &TrainCommand) -> Result<TrainSummary> {
    let dataset = Dataset::load(&cmd.data)?;
    let mut config = cmd.config.clone();
    config.k_max = cmd.k_max.unwrap_or(dataset.k_max);
    let manifest =
        RunManifest::start("train", to_json(&config), config.seed).input(&cmd.data)?;
    let quiet = cmd.quiet;
    let result = train_with_progress(&dataset, &config, |stats| {
        if !quiet {
            match stats.val_auc {
                Some(auc) => eprintln!(
                    "epoch {:3}  loss {:.5}  val-auc {:.4}",
                    stats.epoch, stats.mean_loss, auc
                ),
                None => eprintln!("epoch {:3}  loss {:.5}", stats.epoch, stats.mean_loss),
            }
        }
    })?;
    result.checkpoint.save(&cmd.out)?;
    manifest.write(&cmd.out)?;
    Ok(TrainSummary {
        best_epoch: result.checkpoint.epoch,
        epochs_run: result.history.len(),
        val_auc: result.checkpoint.val_auc,
    })
}

pub struct EvaluateCommand {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub candidates: PathBuf,
    pub out: PathBuf,
    pub k: usize,
}

pub fn run_evaluate(cmd: &EvaluateCommand) -> Result<MetricsReport> {
    let manifest = RunManifest::start(
        "evaluate",
        serde_json::json!({ "k": cmd.k }),
        0,
    )
    .input(&cmd.checkpoint)?
    .input(&cmd.data)?
    .input(&cmd.candidates)?;
    let dataset = Dataset::load(&cmd.data)?;
    let checkpoint = Checkpoint::load(&cmd.checkpoint)?;
    let params = checkpoint.to_params()?;
    let candidates = CandidateSet::load(&cmd.candidates)?;
    let report = eval::evaluate(&dataset, &params, &checkpoint.config, &candidates, cmd.k)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&cmd.out, json + "\n")
        .map_err(|e| Error::io(cmd.out.display().to_string(), e))?;
    manifest.write(&cmd.out)?;
    Ok(report)
}

pub struct PredictCommand {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub user_a: String,
    pub user_b: String,
}

pub fn run_predict(cmd: &PredictCommand) -> Result<Real> {
    let dataset = Dataset::load(&cmd.data)?;
    let checkpoint = Checkpoint::load(&cmd.checkpoint)?;
    let params = checkpoint.to_params()?;
    let a = dataset
        .users
        .get(&cmd.user_a)
        .ok_or_else(|| Error::UnknownUser(cmd.user_a.clone()))?;
    let b = dataset
        .users
        .get(&cmd.user_b)
        .ok_or_else(|| Error::UnknownUser(cmd.user_b.clone()))?;
    if a == b {
        return Err(Error::Invalid("cannot score a user against itself".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (y, _) = score_pair(&dataset, &params, &checkpoint.config, a, b, false, &mut rng)?;
    Ok(y)
}

pub struct GradcheckCommand {
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub coords_per_group: usize,
    pub tolerance: Real,
}

impl Default for GradcheckCommand {
    fn default() -> Self {
        GradcheckCommand {
            seed: 0,
            embed_dim: 16,
            hidden_dim: 24,
            coords_per_group: 12,
            tolerance: 1e-4,
        }
    }
}

pub fn run_gradcheck(cmd: &GradcheckCommand) -> Result<(Vec<GroupReport>, bool)> {
    let dataset = gradcheck::toy_dataset(6, cmd.seed.wrapping_add(1));
    let config = ModelConfig {
        embed_dim: cmd.embed_dim,
        hidden_dim: cmd.hidden_dim,
        fusion_hidden: 32,
        k_max: 16,
        heads: 3,
        gat_depth: 2,
        seed: cmd.seed,
        ..ModelConfig::default()
    };
    let reports =
        gradcheck::model_gradient_report(&dataset, &config, cmd.seed, cmd.coords_per_group, 1e-5)?;
    let ok = reports.iter().all(|r| r.max_rel_err < cmd.tolerance);
    Ok((reports, ok))
}

pub struct SynthCommand {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_checkins: PathBuf,
    pub out_edges: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub users: usize,
    pub edges: usize,
    pub checkins: usize,
}

pub fn run_synth(cmd: &SynthCommand) -> Result<SynthSummary> {
    let mut config = match &cmd.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str::<SynthConfig>(&raw)
                .map_err(|e| Error::Config(format!("bad synth config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = cmd.seed {
        config.seed = seed;
    }
    let manifest = RunManifest::start("synth", to_json(&config), config.seed);
    let out = generate_to_files(&config, &cmd.out_checkins, &cmd.out_edges)?;
    manifest.write(&cmd.out_checkins)?;
    Ok(SynthSummary {
        users: out.num_users,
        edges: out.num_edges,
        checkins: out.checkin_lines.len(),
    })
}
