//! Relation matching: multi-head attention over the training friendship
//! graph. Each layer shares one linear transform across its heads, scores
//! neighbors with per-head vectors, normalizes with a LeakyReLU-softmax and
//! aggregates; head outputs are averaged.
//!
//! The adjacency always comes from train edges only (with self-loops), so
//! evaluation pairs never leak structure.

use crate::autodiff::{ParamId, Tape, ValueId};
use crate::error::Result;
use crate::model::{GatLayerIds, LEAKY_SLOPE};
use crate::params::ParamStore;
use crate::types::UserId;

/// Attention coefficient of one ordered pair under one head:
/// `a . [W e_m (+) W e_n]` where the transformed embeddings are given.
pub fn attention_coefficient(
    tape: &mut Tape,
    w_e_m: ValueId,
    w_e_n: ValueId,
    a: ValueId,
) -> Result<ValueId> {
    let joint = tape.concat(&[w_e_m, w_e_n])?;
    tape.dot(a, joint)
}

/// Softmax-normalized neighbor weights from raw coefficients.
pub fn neighbor_weights(tape: &mut Tape, coefficients: ValueId) -> Result<ValueId> {
    let act = tape.leaky_relu(coefficients, LEAKY_SLOPE);
    tape.softmax(act, None)
}

/// One propagation layer over all users.
pub fn propagate_layer(
    tape: &mut Tape,
    store: &ParamStore,
    current: ValueId,
    adjacency: &[Vec<UserId>],
    layer: &GatLayerIds,
) -> Result<ValueId> {
    let n = adjacency.len();
    let d = tape.value(current).cols();
    let w = store.leaf(tape, layer.w);
    let transformed = tape.matmul_nt(current, w)?;

    // Per head: score every user against every user once via the split
    // attention vector, then combine per neighborhood.
    let mut head_parts: Vec<(ValueId, ValueId)> = Vec::with_capacity(layer.heads.len());
    for &a_id in &layer.heads {
        let a = store.leaf(tape, a_id);
        let a_src = tape.slice1d(a, 0, d)?;
        let a_dst = tape.slice1d(a, d, d)?;
        let p_src = tape.matvec(transformed, a_src)?;
        let p_dst = tape.matvec(transformed, a_dst)?;
        head_parts.push((p_src, p_dst));
    }

    let inv_heads = 1.0 / layer.heads.len() as crate::types::Real;
    let mut user_rows = Vec::with_capacity(n);
    for (m, neighbors) in adjacency.iter().enumerate() {
        let ids: Vec<usize> = neighbors.iter().map(|&u| u as usize).collect();
        let mut head_outputs = Vec::with_capacity(head_parts.len());
        for &(p_src, p_dst) in &head_parts {
            let own = tape.index_elem(p_src, m)?;
            let neigh = tape.gather1d(p_dst, &ids)?;
            let coeff = tape.add_scalar_node(neigh, own)?;
            let alpha = neighbor_weights(tape, coeff)?;
            let agg = tape.weighted_sum_rows(transformed, &ids, alpha)?;
            head_outputs.push(tape.elu(agg));
        }
        let summed = tape.add_n(&head_outputs)?;
        user_rows.push(tape.scale(summed, inv_heads));
    }
    tape.stack_rows(&user_rows)
}

/// Multi-layer propagation starting from the raw user embeddings; depth 0
/// returns them unchanged.
pub fn propagate(
    tape: &mut Tape,
    store: &ParamStore,
    user_emb: ParamId,
    layers: &[GatLayerIds],
    adjacency: &[Vec<UserId>],
    depth: usize,
) -> Result<ValueId> {
    debug_assert!(depth <= layers.len());
    let mut current = store.leaf(tape, user_emb);
    for layer in layers.iter().take(depth) {
        current = propagate_layer(tape, store, current, adjacency, layer)?;
    }
    Ok(current)
}

/// Social matching vector: elementwise `tanh(z_m . z_n)`; symmetric.
pub fn v_rel(tape: &mut Tape, z_m: ValueId, z_n: ValueId) -> Result<ValueId> {
    let prod = tape.hadamard(z_m, z_n)?;
    Ok(tape.tanh(prod))
}
