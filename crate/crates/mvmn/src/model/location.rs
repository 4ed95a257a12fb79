//! Location matching: pairwise cosine similarity between the two users'
//! location embeddings, max-pooled per row and per column, padded to a fixed
//! width.

use crate::autodiff::{ParamId, Tape, ValueId};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::types::LocationId;

/// Cosine similarity of two embedding vectors on the tape. Zero-norm inputs
/// yield 0 with zero gradient, which keeps padding inert.
pub fn cosine(tape: &mut Tape, a: ValueId, b: ValueId) -> Result<ValueId> {
    let am = tape.stack_rows(&[a])?;
    let bm = tape.stack_rows(&[b])?;
    let an = tape.normalize_rows(am)?;
    let bn = tape.normalize_rows(bm)?;
    let s = tape.matmul_nt(an, bn)?;
    let row = tape.row(s, 0)?;
    tape.index_elem(row, 0)
}

/// The full pairwise similarity matrix between two gathered embedding
/// matrices: rows L2-normalized, then `A * B^T`.
pub fn similarity_matrix(tape: &mut Tape, emb_m: ValueId, emb_n: ValueId) -> Result<ValueId> {
    let nm = tape.normalize_rows(emb_m)?;
    let nn = tape.normalize_rows(emb_n)?;
    tape.matmul_nt(nm, nn)
}

/// Row-wise and column-wise max-pooling of a similarity matrix, on the true
/// (unpadded) lengths.
pub fn match_vectors(tape: &mut Tape, sim: ValueId) -> Result<(ValueId, ValueId)> {
    let s_m = tape.max_over_axis(sim, 1, None)?;
    let s_n = tape.max_over_axis(sim, 0, None)?;
    Ok((s_m, s_n))
}

/// Pads both pooled vectors with zeros to `k_max` and concatenates them,
/// first-user block first. Inputs longer than `k_max` are an error;
/// truncation belongs to ingestion.
pub fn v_loc(tape: &mut Tape, s_m: ValueId, s_n: ValueId, k_max: usize) -> Result<ValueId> {
    for s in [s_m, s_n] {
        let len = tape.value(s).len();
        if len > k_max {
            return Err(Error::Invalid(format!(
                "pooled vector of length {len} exceeds k_max {k_max}; truncate during ingestion"
            )));
        }
    }
    let pm = tape.pad1d(s_m, k_max)?;
    let pn = tape.pad1d(s_n, k_max)?;
    tape.concat(&[pm, pn])
}

/// The complete geographic view for a pair of location-id sequences.
pub fn location_view(
    tape: &mut Tape,
    store: &ParamStore,
    loc_emb: ParamId,
    locs_m: &[LocationId],
    locs_n: &[LocationId],
    k_max: usize,
) -> Result<ValueId> {
    if locs_m.is_empty() || locs_n.is_empty() {
        return Err(Error::Invalid("empty location sequence".into()));
    }
    let rows_m: Vec<usize> = locs_m.iter().map(|&l| l as usize).collect();
    let rows_n: Vec<usize> = locs_n.iter().map(|&l| l as usize).collect();
    let emb_m = store.lookup(tape, loc_emb, &rows_m);
    let emb_n = store.lookup(tape, loc_emb, &rows_n);
    let sim = similarity_matrix(tape, emb_m, emb_n)?;
    let (s_m, s_n) = match_vectors(tape, sim)?;
    v_loc(tape, s_m, s_n, k_max)
}
