//! Finite-difference verification of the full-model gradients, reported per
//! parameter group. Used by the `gradcheck` subcommand and the acceptance
//! suite.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::dataset::{Dataset, Edge, Vocab};
use crate::error::Result;
use crate::model::{
    build_pair, ce_loss_node, init_params, relation, EncodeCache, ModelConfig, ModelParams,
    RelSource,
};
use crate::types::{CheckIn, LabeledPair, Real, Trajectory};

/// Deterministic miniature dataset for gradient checks and examples.
pub fn toy_dataset(num_users: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_locs = 6;
    let users = Vocab::from_ids((0..num_users).map(|i| format!("u{i:02}")).collect());
    let locations = Vocab::from_ids((0..n_locs).map(|i| format!("l{i}")).collect());
    let trajectories = (0..num_users)
        .map(|u| {
            let mut t = rng.gen_range(0..86_400i64);
            let events = (0..rng.gen_range(2..6))
                .map(|_| {
                    t += rng.gen_range(600..90_000i64);
                    CheckIn::new(rng.gen_range(0..n_locs) as u32, t)
                })
                .collect();
            Trajectory::new(u as u32, events)
        })
        .collect();
    let mut train = BTreeSet::new();
    let mut val = BTreeSet::new();
    let mut test = BTreeSet::new();
    for a in 0..num_users as u32 {
        for b in (a + 1)..num_users as u32 {
            if rng.gen_bool(0.5) {
                match rng.gen_range(0..10) {
                    0 => val.insert(Edge::new(a, b)),
                    1 => test.insert(Edge::new(a, b)),
                    _ => train.insert(Edge::new(a, b)),
                };
            }
        }
    }
    Dataset::new(
        users,
        locations,
        24,
        16,
        "toy".into(),
        trajectories,
        train,
        val,
        test,
    )
    .expect("toy dataset is consistent")
}

/// Mean total loss of a batch on a single tape (dropout inert); optionally
/// fills the store's gradient slots via one reverse sweep.
pub fn batch_loss(
    dataset: &Dataset,
    params: &mut ModelParams,
    config: &ModelConfig,
    batch: &[LabeledPair],
    with_gradients: bool,
) -> Result<Real> {
    let mut tape = Tape::new();
    let rel_src = if config.views.relation {
        let z = relation::propagate(
            &mut tape,
            &params.store,
            params.ids.user_emb,
            &params.ids.gat,
            &dataset.train_adjacency,
            config.gat_depth,
        )?;
        Some(RelSource::OnTape(z))
    } else {
        None
    };
    let mut cache = EncodeCache::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: dropout inert
    let mut terms = Vec::with_capacity(batch.len());
    for pair in batch {
        let nodes = build_pair(
            &mut tape,
            params,
            config,
            dataset,
            pair.u_m,
            pair.u_n,
            rel_src.as_ref(),
            &mut cache,
            false,
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
    }
    let sum = tape.add_n(&terms)?;
    let loss = tape.scale(sum, 1.0 / batch.len() as Real);
    let value = tape.value(loss).item();
    if with_gradients {
        let mut grads = params.store.grad_store();
        tape.backward(loss, &mut grads)?;
        params.store.accumulate(&grads);
    }
    Ok(value)
}

/// A fixed probe batch: every train edge as a positive plus an equal number
/// of deterministic non-edges.
pub fn probe_batch(dataset: &Dataset, max_pairs: usize) -> Vec<LabeledPair> {
    let mut batch: Vec<LabeledPair> = dataset
        .train_edges
        .iter()
        .take(max_pairs / 2)
        .map(|e| LabeledPair::new(e.0, e.1, true))
        .collect();
    let n = dataset.num_users() as u32;
    let positives = batch.len();
    'outer: for a in 0..n {
        for b in (a + 1)..n {
            if !dataset.train_edges.contains(&Edge::new(a, b)) {
                batch.push(LabeledPair::new(a, b, false));
                if batch.len() >= positives * 2 {
                    break 'outer;
                }
            }
        }
    }
    batch
}

/// Finite-difference accuracy of one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: Real,
    pub coords_checked: usize,
}

/// Compares analytic gradients of the batch loss against central finite
/// differences on sampled coordinates of every parameter group.
pub fn model_gradient_report(
    dataset: &Dataset,
    config: &ModelConfig,
    seed: u64,
    coords_per_group: usize,
    fd_step: Real,
) -> Result<Vec<GroupReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(
        config,
        dataset.num_users(),
        dataset.num_locations(),
        &mut rng,
    );
    let batch = probe_batch(dataset, 8);

    params.store.zero_grads();
    batch_loss(dataset, &mut params, config, &batch, true)?;
    let analytic: Vec<Vec<Real>> = params
        .store
        .ids()
        .map(|id| params.store.grad(id).data().to_vec())
        .collect();
    params.store.zero_grads();

    let ids: Vec<_> = params.store.ids().collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let name = params.store.name(id).to_string();
        let len = params.store.value(id).len();
        let mut coords: Vec<usize> = (0..len).collect();
        if len > coords_per_group {
            coords.shuffle(&mut rng);
            coords.truncate(coords_per_group);
        }
        let mut max_rel = 0.0;
        for &c in &coords {
            let orig = params.store.value(id).data()[c];
            params.store.value_mut(id).data_mut()[c] = orig + fd_step;
            let plus = batch_loss(dataset, &mut params, config, &batch, false)?;
            params.store.value_mut(id).data_mut()[c] = orig - fd_step;
            let minus = batch_loss(dataset, &mut params, config, &batch, false)?;
            params.store.value_mut(id).data_mut()[c] = orig;
            let fd = (plus - minus) / (2.0 * fd_step);
            let an = analytic[id.0][c];
            // relative above the floor; effectively absolute (1e-8) for
            // near-zero gradients where relative error is ill-defined
            let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-4);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        reports.push(GroupReport {
            name,
            max_rel_err: max_rel,
            coords_checked: coords.len(),
        });
    }
    Ok(reports)
}
