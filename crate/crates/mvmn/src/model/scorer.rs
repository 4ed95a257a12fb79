//! Read-only batch scorer: propagates the relation graph once, encodes each
//! user's time-series once, then scores arbitrary pairs cheaply. Produces
//! exactly the same numbers as [`crate::model::score_pair`] in eval mode.

use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{location, relation, temporal, ModelConfig, ModelParams};
use crate::types::{Real, UserId};

/// Precomputed per-user state for scoring many pairs under frozen
/// parameters. Dropout is always inert here.
pub struct Scorer<'a> {
    params: &'a ModelParams,
    config: &'a ModelConfig,
    dataset: &'a Dataset,
    /// Final LSTM hidden state per user (temporal view).
    h_last: Vec<Option<Tensor>>,
    /// Propagated relation embedding per user (relation view).
    z: Option<Tensor>,
    /// Row-normalized location embeddings (location view).
    loc_norm: Option<Tensor>,
}

impl<'a> Scorer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        params: &'a ModelParams,
        config: &'a ModelConfig,
    ) -> Result<Self> {
        let n = dataset.num_users();

        let z = if config.views.relation {
            let mut tape = Tape::new();
            let out = relation::propagate(
                &mut tape,
                &params.store,
                params.ids.user_emb,
                &params.ids.gat,
                &dataset.train_adjacency,
                config.gat_depth,
            )?;
            Some(tape.value(out).clone())
        } else {
            None
        };

        let h_last = if config.views.temporal {
            // Each user is encoded on its own scratch tape; read-only over
            // the parameters, deterministic regardless of scheduling.
            (0..n as u32)
                .into_par_iter()
                .map(|u| {
                    let mut tape = Tape::new();
                    let lstm = temporal::LstmIds {
                        w_x: params.ids.lstm_w_x,
                        w_h: params.ids.lstm_w_h,
                        bias: params.ids.lstm_bias,
                    };
                    let series =
                        temporal::TimeSeriesInput::from_trajectory(dataset.trajectory(u))?;
                    let states = temporal::encode(
                        &mut tape,
                        &params.store,
                        params.ids.time_emb,
                        lstm,
                        &series,
                    )?;
                    Ok(Some(tape.value(*states.last().unwrap()).clone()))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![None; n]
        };

        let loc_norm = if config.views.location {
            let mut tape = Tape::new();
            let table = params.store.leaf(&mut tape, params.ids.loc_emb);
            let normed = tape.normalize_rows(table)?;
            Some(tape.value(normed).clone())
        } else {
            None
        };

        Ok(Scorer {
            params,
            config,
            dataset,
            h_last,
            z,
            loc_norm,
        })
    }

    /// Link probability for one pair under the frozen parameters.
    pub fn score(&self, u_m: UserId, u_n: UserId) -> Result<Real> {
        let n_users = self.dataset.num_users() as u32;
        if u_m >= n_users || u_n >= n_users {
            return Err(Error::UnknownUser(u_m.max(u_n).to_string()));
        }
        let mut tape = Tape::new();
        let mut views: Vec<ValueId> = Vec::with_capacity(3);

        if let Some(loc_norm) = &self.loc_norm {
            let gather = |ids: &[u32]| -> Tensor {
                let cols = loc_norm.cols();
                let mut data = Vec::with_capacity(ids.len() * cols);
                for &l in ids {
                    data.extend_from_slice(loc_norm.row(l as usize));
                }
                Tensor::matrix(ids.len(), cols, data)
            };
            let a = tape.constant(gather(&self.dataset.trajectory(u_m).location_ids()));
            let b = tape.constant(gather(&self.dataset.trajectory(u_n).location_ids()));
            let sim = tape.matmul_nt(a, b)?;
            let (s_m, s_n) = location::match_vectors(&mut tape, sim)?;
            views.push(location::v_loc(&mut tape, s_m, s_n, self.config.k_max)?);
        }

        if self.config.views.temporal {
            let h_m = tape.constant(self.h_last[u_m as usize].clone().unwrap());
            let h_n = tape.constant(self.h_last[u_n as usize].clone().unwrap());
            views.push(temporal::v_time(&mut tape, h_m, h_n)?);
        }

        if let Some(z) = &self.z {
            let z_m = tape.constant(Tensor::vector(z.row(u_m as usize).to_vec()));
            let z_n = tape.constant(Tensor::vector(z.row(u_n as usize).to_vec()));
            views.push(relation::v_rel(&mut tape, z_m, z_n)?);
        }

        let ids = &self.params.ids;
        let features = tape.concat(&views)?;
        let w1 = self.params.store.leaf(&mut tape, ids.fusion_w1);
        let b1 = self.params.store.leaf(&mut tape, ids.fusion_b1);
        let lin = tape.matvec(w1, features)?;
        let lin = tape.add(lin, b1)?;
        let act = tape.elu(lin);
        let w2 = self.params.store.leaf(&mut tape, ids.fusion_w2);
        let b2 = self.params.store.leaf(&mut tape, ids.fusion_b2);
        let logit = tape.dot(w2, act)?;
        let logit = tape.add(logit, b2)?;
        let y = tape.sigmoid(logit);
        Ok(tape.value(y).item())
    }

    /// Scores many pairs in parallel, preserving input order.
    pub fn score_all(&self, pairs: &[(UserId, UserId)]) -> Result<Vec<Real>> {
        pairs
            .par_iter()
            .map(|&(m, n)| self.score(m, n))
            .collect()
    }
}
