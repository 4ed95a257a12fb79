//! Negative-sampled training with early stopping on validation AUC, plus the
//! checkpoint file format.
//!
//! Per batch, the relation graph is propagated once on a shared tape; pair
//! forwards run on small per-chunk tapes that track the propagated rows as
//! inputs, and their gradients are re-seeded through the shared tape. Chunks
//! are processed in parallel but merged in fixed order, so results do not
//! depend on the thread count.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, GradStore, Tape, Tensor};
use crate::dataset::{Dataset, Edge};
use crate::error::{Error, Result};
use crate::eval;
use crate::ingest::{sample_eval_candidates, CandidateSet, EvalSplit};
use crate::manifest::derive_seed;
use crate::model::scorer::Scorer;
use crate::model::{
    build_pair, ce_loss_node, init_params, relation, EncodeCache, ModelConfig, ModelParams,
    RelSource,
};
use crate::types::{LabeledPair, Real, UserId};

/// Pairs per worker tape; fixed so gradients are identical for any thread
/// count.
const CHUNK_PAIRS: usize = 8;

/// A trained (or initial) model state, reloadable from disk.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_auc: Option<Real>,
    pub params: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: Real,
    pub val_auc: Option<Real>,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// One epoch's worth of shuffled training batches: every train edge as a
/// positive plus `neg_per_pos` sampled users not linked to the anchor in the
/// train graph. Negatives are resampled every epoch; val/test edges are
/// invisible here.
pub fn make_training_batches(
    train_edges: &BTreeSet<Edge>,
    dataset: &Dataset,
    neg_per_pos: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<LabeledPair>>> {
    let n = dataset.num_users() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("negatives-{epoch}")));
    let mut pairs: Vec<LabeledPair> = Vec::with_capacity(train_edges.len() * (1 + neg_per_pos));
    for edge in train_edges {
        pairs.push(LabeledPair::new(edge.0, edge.1, true));
        let anchor = if rng.gen_bool(0.5) { edge.0 } else { edge.1 };
        let blocked = &dataset.train_adjacency[anchor as usize];
        let available = (n as usize).saturating_sub(blocked.len());
        if available == 0 {
            return Err(Error::Invalid(format!(
                "user {anchor} is linked to every other user; cannot sample negatives"
            )));
        }
        let want = neg_per_pos.min(available);
        let mut chosen: HashSet<UserId> = HashSet::new();
        let mut attempts = 0usize;
        while chosen.len() < want {
            attempts += 1;
            if attempts > 10_000 * (neg_per_pos + 1) {
                return Err(Error::Invalid(format!(
                    "negative sampling for user {anchor} did not converge"
                )));
            }
            let w = rng.gen_range(0..n);
            if blocked.binary_search(&w).is_ok() || !chosen.insert(w) {
                continue;
            }
            pairs.push(LabeledPair::new(anchor, w, false));
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs.chunks(batch_size).map(|c| c.to_vec()).collect())
}

struct ChunkOutput {
    grads: GradStore,
    rel_grads: Vec<(UserId, Tensor)>,
    loss: Real,
}

/// Forward + backward over one batch; accumulates gradients into the store
/// and returns the mean batch loss.
fn train_batch(
    dataset: &Dataset,
    params: &mut ModelParams,
    config: &ModelConfig,
    batch: &[LabeledPair],
    epoch: usize,
    batch_idx: usize,
) -> Result<Real> {
    // Stage 1: shared propagation over the train graph.
    let mut gat_tape = Tape::new();
    let z_node = if config.views.relation {
        Some(relation::propagate(
            &mut gat_tape,
            &params.store,
            params.ids.user_emb,
            &params.ids.gat,
            &dataset.train_adjacency,
            config.gat_depth,
        )?)
    } else {
        None
    };
    let z_vals = z_node.map(|z| gat_tape.value(z).clone());

    // Stage 2: per-chunk pair tapes, parallel but order-merged.
    let inv_batch = 1.0 / batch.len() as Real;
    let params_ref = &*params;
    let chunks: Vec<Result<ChunkOutput>> = batch
        .par_chunks(CHUNK_PAIRS)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut tape = Tape::new();
            let mut cache = EncodeCache::default();
            let rel_src = z_vals.as_ref().map(RelSource::External);
            let mut terms = Vec::with_capacity(chunk.len());
            let mut rel_vars = Vec::new();
            for (i, pair) in chunk.iter().enumerate() {
                let gi = chunk_idx * CHUNK_PAIRS + i;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &format!("dropout-{epoch}-{batch_idx}-{gi}"),
                ));
                let nodes = build_pair(
                    &mut tape,
                    params_ref,
                    config,
                    dataset,
                    pair.u_m,
                    pair.u_n,
                    rel_src.as_ref(),
                    &mut cache,
                    true,
                    &mut rng,
                )?;
                let ce = ce_loss_node(&mut tape, nodes.y_hat, pair.label)?;
                let term = match nodes.pp {
                    Some(pp) if config.pp_active() => {
                        let scaled = tape.scale(pp, config.beta);
                        tape.add(ce, scaled)?
                    }
                    _ => ce,
                };
                terms.push(term);
                rel_vars.extend(nodes.rel_vars);
            }
            let sum = tape.add_n(&terms)?;
            let scaled = tape.scale(sum, inv_batch);
            let loss = tape.value(scaled).item();
            let mut grads = params_ref.store.grad_store();
            let var_grads = tape.backward(scaled, &mut grads)?;
            let rel_grads = rel_vars
                .into_iter()
                .filter_map(|(user, var)| {
                    var_grads.get(var).map(|g| (user, g.clone()))
                })
                .collect();
            Ok(ChunkOutput {
                grads,
                rel_grads,
                loss,
            })
        })
        .collect();

    // Stage 3: ordered merge, then push relation gradients through the
    // shared tape.
    let mut total_loss = 0.0;
    let mut batch_grads = params.store.grad_store();
    let mut dz = z_vals
        .as_ref()
        .map(|z| Tensor::zeros(&[z.rows(), z.cols()]));
    for chunk in chunks {
        let chunk = chunk?;
        total_loss += chunk.loss;
        batch_grads.merge(&chunk.grads);
        if let Some(dz) = dz.as_mut() {
            for (user, g) in chunk.rel_grads {
                let row = dz.row_mut(user as usize);
                for (r, v) in row.iter_mut().zip(g.data()) {
                    *r += v;
                }
            }
        }
    }
    if let (Some(z), Some(dz)) = (z_node, dz) {
        gat_tape.backward_seeded(&[(z, dz)], &mut batch_grads)?;
    }

    if !total_loss.is_finite() {
        let pairs = batch
            .iter()
            .map(|p| format!("({},{},{})", p.u_m, p.u_n, p.label as u8))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::NanLoss {
            epoch,
            batch: batch_idx,
            pairs,
        });
    }
    params.store.accumulate(&batch_grads);
    Ok(total_loss)
}

fn validation_auc(
    dataset: &Dataset,
    params: &ModelParams,
    config: &ModelConfig,
    pools: &Option<CandidateSet>,
) -> Result<Option<Real>> {
    let Some(pools) = pools else {
        return Ok(None);
    };
    let scorer = Scorer::new(dataset, params, config)?;
    let run = eval::score_candidates(&scorer, dataset, pools)?;
    Ok(Some(eval::auc(&run)?))
}

/// Builds validation candidate pools, shrinking the negative count if the
/// graph is too small for the default of 50.
fn validation_pools(dataset: &Dataset, config: &ModelConfig) -> Result<Option<CandidateSet>> {
    if dataset.val_edges.is_empty() {
        return Ok(None);
    }
    let mut degree = vec![0usize; dataset.num_users()];
    for e in dataset.all_edges() {
        degree[e.0 as usize] += 1;
        degree[e.1 as usize] += 1;
    }
    let available = dataset
        .val_edges
        .iter()
        .flat_map(|e| [e.0, e.1])
        .map(|u| dataset.num_users() - 1 - degree[u as usize])
        .min()
        .unwrap_or(0);
    let per_user = 50.min(available);
    if per_user == 0 {
        return Ok(None);
    }
    let seed = derive_seed(config.seed, "val-pools");
    Ok(Some(sample_eval_candidates(
        dataset,
        per_user,
        seed,
        EvalSplit::Val,
    )?))
}

/// Full training run: Adam over epochs of negative-sampled batches, keeping
/// the best-validation-AUC snapshot and stopping early after `patience`
/// epochs without improvement.
pub fn train(dataset: &Dataset, config: &ModelConfig) -> Result<TrainResult> {
    train_with_progress(dataset, config, |_| {})
}

/// Like [`train`] but invokes `progress` after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &ModelConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    config.validate()?;
    let max_len = dataset.trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
    if config.k_max < max_len {
        return Err(Error::Config(format!(
            "k_max {} below longest trajectory {max_len}",
            config.k_max
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
    let mut params = init_params(
        config,
        dataset.num_users(),
        dataset.num_locations(),
        &mut init_rng,
    );
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params.store,
    );

    let val_pools = validation_pools(dataset, config)?;
    let mut best_auc = validation_auc(dataset, &params, config, &val_pools)?;
    let mut best_snapshot = params.store.snapshot();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut history = Vec::new();

    for epoch in 1..=config.epochs {
        let batches = make_training_batches(
            &dataset.train_edges,
            dataset,
            config.neg_per_pos,
            config.batch_size,
            config.seed,
            epoch,
        )?;
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            epoch_loss += train_batch(dataset, &mut params, config, batch, epoch, batch_idx)?;
            adam.step(&mut params.store)?;
        }
        let mean_loss = epoch_loss / batches.len().max(1) as Real;
        let val_auc = validation_auc(dataset, &params, config, &val_pools)?;

        let stats = EpochStats {
            epoch,
            mean_loss,
            val_auc,
        };
        progress(&stats);
        history.push(stats);

        match (val_auc, best_auc) {
            (Some(now), Some(best)) if now > best => {
                best_auc = Some(now);
                best_snapshot = params.store.snapshot();
                best_epoch = epoch;
                since_best = 0;
            }
            (Some(_), Some(_)) => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            // no validation signal: keep the latest parameters
            _ => {
                best_snapshot = params.store.snapshot();
                best_epoch = epoch;
            }
        }
    }

    Ok(TrainResult {
        checkpoint: Checkpoint {
            config: config.clone(),
            epoch: best_epoch,
            val_auc: best_auc,
            params: best_snapshot,
        },
        history,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    epoch: usize,
    val_auc: Option<Real>,
    manifest: Vec<TensorManifest>,
    data_bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorManifest {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
    /// Element count.
    len: usize,
}

impl Checkpoint {
    /// Writes a JSON header line followed by raw little-endian 64-bit
    /// parameter blocks laid out per the manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = Vec::with_capacity(self.params.len());
        let mut offset = 0usize;
        for (name, tensor) in &self.params {
            manifest.push(TensorManifest {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset,
                len: tensor.len(),
            });
            offset += tensor.len() * 8;
        }
        let header = CheckpointHeader {
            version: 1,
            config: self.config.clone(),
            epoch: self.epoch,
            val_auc: self.val_auc,
            manifest,
            data_bytes: offset,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(offset);
        for (_, tensor) in &self.params {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f64).to_le_bytes());
            }
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&out)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CheckpointFormat("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        let data = &bytes[newline + 1..];
        if data.len() != header.data_bytes {
            return Err(Error::CheckpointFormat(format!(
                "expected {} data bytes, found {}",
                header.data_bytes,
                data.len()
            )));
        }
        let mut params = Vec::with_capacity(header.manifest.len());
        for entry in &header.manifest {
            let expect: usize = entry.shape.iter().product();
            if expect != entry.len || entry.offset + entry.len * 8 > data.len() {
                return Err(Error::CheckpointFormat(format!(
                    "bad manifest entry for {}",
                    entry.name
                )));
            }
            let mut values = Vec::with_capacity(entry.len);
            for i in 0..entry.len {
                let start = entry.offset + i * 8;
                let raw: [u8; 8] = data[start..start + 8].try_into().unwrap();
                values.push(f64::from_le_bytes(raw) as Real);
            }
            params.push((entry.name.clone(), Tensor::new(entry.shape.clone(), values)));
        }
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            val_auc: header.val_auc,
            params,
        })
    }

    /// Rebuilds runtime parameters from the stored snapshot.
    pub fn to_params(&self) -> Result<ModelParams> {
        let user_rows = self
            .params
            .iter()
            .find(|(n, _)| n == "embed.user")
            .map(|(_, t)| t.rows())
            .ok_or_else(|| Error::CheckpointFormat("missing embed.user".into()))?;
        let loc_rows = self
            .params
            .iter()
            .find(|(n, _)| n == "embed.location")
            .map(|(_, t)| t.rows())
            .ok_or_else(|| Error::CheckpointFormat("missing embed.location".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = init_params(&self.config, user_rows, loc_rows, &mut rng);
        for (name, tensor) in &self.params {
            let id = params.store.id(name).ok_or_else(|| {
                Error::CheckpointFormat(format!("unknown parameter {name} in checkpoint"))
            })?;
            if params.store.value(id).shape() != tensor.shape() {
                return Err(Error::CheckpointFormat(format!(
                    "shape mismatch for {name}"
                )));
            }
        }
        params.store.restore(&self.params);
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::toy_dataset;
    use crate::model::score_pair;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            hidden_dim: 8,
            fusion_hidden: 8,
            k_max: 16,
            heads: 2,
            gat_depth: 1,
            epochs: 2,
            batch_size: 16,
            lr: 1e-3,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn batches_have_expected_composition() {
        let ds = toy_dataset(40, 8);
        let batches =
            make_training_batches(&ds.train_edges, &ds, 4, 64, 7, 1).unwrap();
        let pairs: Vec<LabeledPair> = batches.into_iter().flatten().collect();
        let positives = pairs.iter().filter(|p| p.label).count();
        let negatives = pairs.len() - positives;
        assert_eq!(positives, ds.train_edges.len());
        assert_eq!(negatives, 4 * positives);
        for p in &pairs {
            if p.label {
                assert!(ds.train_edges.contains(&Edge::new(p.u_m, p.u_n)));
            } else {
                assert!(!ds.train_edges.contains(&Edge::new(p.u_m, p.u_n)));
                assert_ne!(p.u_m, p.u_n);
            }
        }
    }

    #[test]
    fn negatives_differ_across_epochs_and_match_across_runs() {
        let ds = toy_dataset(40, 9);
        let e1 = make_training_batches(&ds.train_edges, &ds, 4, 64, 7, 1).unwrap();
        let e1_again = make_training_batches(&ds.train_edges, &ds, 4, 64, 7, 1).unwrap();
        let e2 = make_training_batches(&ds.train_edges, &ds, 4, 64, 7, 2).unwrap();
        let flat = |b: &Vec<Vec<LabeledPair>>| -> Vec<LabeledPair> {
            b.iter().flatten().copied().collect()
        };
        assert_eq!(flat(&e1), flat(&e1_again), "same seed+epoch is identical");
        assert_ne!(flat(&e1), flat(&e2), "epochs resample");
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_scores() {
        let ds = toy_dataset(8, 10);
        let cfg = tiny_config();
        let result = train(&ds, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        result.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, result.checkpoint.epoch);
        assert_eq!(loaded.config, cfg);

        let p1 = result.checkpoint.to_params().unwrap();
        let p2 = loaded.to_params().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (m, n) in [(0u32, 3u32), (2, 5), (6, 1)] {
            let (a, _) = score_pair(&ds, &p1, &cfg, m, n, false, &mut rng).unwrap();
            let (b, _) = score_pair(&ds, &p2, &cfg, m, n, false, &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint() {
        let ds = toy_dataset(8, 11);
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let result = train(&ds, &cfg).unwrap();
        assert_eq!(result.checkpoint.epoch, 0);
        assert!(result.history.is_empty());
    }

    #[test]
    fn identical_seeds_give_identical_checkpoints() {
        let ds = toy_dataset(10, 12);
        let cfg = tiny_config();
        let r1 = train(&ds, &cfg).unwrap();
        let r2 = train(&ds, &cfg).unwrap();
        assert_eq!(r1.checkpoint.epoch, r2.checkpoint.epoch);
        for ((n1, t1), (n2, t2)) in r1.checkpoint.params.iter().zip(&r2.checkpoint.params) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data(), "parameter {n1} differs");
        }
    }

    #[test]
    fn training_is_invariant_to_thread_count() {
        let ds = toy_dataset(10, 13);
        let cfg = tiny_config();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let r1 = pool.install(|| train(&ds, &cfg)).unwrap();
        let r2 = train(&ds, &cfg).unwrap();
        for ((_, t1), (_, t2)) in r1.checkpoint.params.iter().zip(&r2.checkpoint.params) {
            assert_eq!(t1.data(), t2.data());
        }
    }
}
