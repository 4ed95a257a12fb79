//! The multi-view matching model: configuration, parameters, per-pair
//! scoring and losses.

pub mod location;
pub mod relation;
pub mod scorer;
pub mod temporal;

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Tensor, ValueId};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::types::{Real, UserId, HOURS_PER_DAY};

/// Negative slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: Real = 0.2;
/// Probability clamp applied before the cross-entropy logs.
pub const PROB_EPS: Real = 1e-7;

/// Which matching views participate in scoring, and whether the
/// point-process likelihood term is trained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct ViewToggles {
    pub location: bool,
    pub temporal: bool,
    pub pp_loss: bool,
    pub relation: bool,
}

impl Default for ViewToggles {
    fn default() -> Self {
        ViewToggles {
            location: true,
            temporal: true,
            pp_loss: true,
            relation: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Embedding size for users, locations and time bins.
    pub embed_dim: usize,
    /// LSTM hidden size.
    pub hidden_dim: usize,
    /// Width of the fusion hidden layer.
    pub fusion_hidden: usize,
    /// Maximal trajectory length; fixes the location-view width.
    pub k_max: usize,
    pub heads: usize,
    pub gat_depth: usize,
    /// Weight of the point-process loss.
    pub beta: Real,
    pub neg_per_pos: usize,
    pub lr: Real,
    pub batch_size: usize,
    pub dropout: Real,
    pub epochs: usize,
    /// Early-stopping patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
    pub views: ViewToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_dim: 128,
            fusion_hidden: 128,
            k_max: 200,
            heads: 3,
            gat_depth: 2,
            beta: 0.1,
            neg_per_pos: 4,
            lr: 1e-4,
            batch_size: 64,
            dropout: 0.5,
            epochs: 50,
            patience: 10,
            seed: 0,
            views: ViewToggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let v = &self.views;
        if !(v.location || v.temporal || v.relation) {
            return Err(Error::Config("at least one view must be enabled".into()));
        }
        if self.heads == 0 && v.relation {
            return Err(Error::Config("relation view needs at least one head".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The point-process loss runs only with the temporal view on and a
    /// positive beta.
    pub fn pp_active(&self) -> bool {
        self.views.temporal && self.views.pp_loss && self.beta > 0.0
    }

    /// Input width of the fusion layer given the enabled views.
    pub fn fusion_input_dim(&self) -> usize {
        let mut dim = 0;
        if self.views.location {
            dim += 2 * self.k_max;
        }
        if self.views.temporal {
            dim += self.hidden_dim;
        }
        if self.views.relation {
            dim += self.embed_dim;
        }
        dim
    }
}

/// Handles to one attention layer's parameters: a shared transform and one
/// scoring vector per head.
#[derive(Debug, Clone)]
pub struct GatLayerIds {
    pub w: ParamId,
    pub heads: Vec<ParamId>,
}

/// Handles into the [`ParamStore`] for every named tensor of the model.
#[derive(Debug, Clone)]
pub struct ParamIds {
    pub user_emb: ParamId,
    pub loc_emb: ParamId,
    pub time_emb: ParamId,
    pub lstm_w_x: ParamId,
    pub lstm_w_h: ParamId,
    pub lstm_bias: ParamId,
    pub pp_v: ParamId,
    pub pp_omega: ParamId,
    pub pp_b: ParamId,
    pub gat: Vec<GatLayerIds>,
    pub fusion_w1: ParamId,
    pub fusion_b1: ParamId,
    pub fusion_w2: ParamId,
    pub fusion_b2: ParamId,
}

/// The parameter store plus its handle map.
pub struct ModelParams {
    pub store: ParamStore,
    pub ids: ParamIds,
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as Real).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Initializes every trainable tensor. Embeddings and weight matrices are
/// uniform in +-1/sqrt(fan_in); biases start at zero; the point-process decay
/// starts at 0.1 so early densities are proper.
pub fn init_params(
    config: &ModelConfig,
    num_users: usize,
    num_locations: usize,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    let d = config.embed_dim;
    let h = config.hidden_dim;
    let mut store = ParamStore::new();

    let user_emb = store.add("embed.user", uniform_init(rng, &[num_users, d], d));
    let loc_emb = store.add(
        "embed.location",
        uniform_init(rng, &[num_locations.max(1), d], d),
    );
    let time_emb = store.add("embed.time", uniform_init(rng, &[HOURS_PER_DAY, d], d));

    let lstm_w_x = store.add("lstm.w_x", uniform_init(rng, &[4 * h, d], d));
    let lstm_w_h = store.add("lstm.w_h", uniform_init(rng, &[4 * h, h], h));
    let lstm_bias = store.add("lstm.bias", Tensor::zeros(&[4 * h]));

    let pp_v = store.add("pp.v", uniform_init(rng, &[h], h));
    let pp_omega = store.add("pp.omega", Tensor::scalar(0.1));
    let pp_b = store.add("pp.b", Tensor::scalar(0.0));

    let mut gat = Vec::new();
    for layer in 0..config.gat_depth {
        let w = store.add(&format!("gat.{layer}.w"), uniform_init(rng, &[d, d], d));
        let heads = (0..config.heads)
            .map(|head| {
                store.add(
                    &format!("gat.{layer}.head{head}.a"),
                    uniform_init(rng, &[2 * d], 2 * d),
                )
            })
            .collect();
        gat.push(GatLayerIds { w, heads });
    }

    let in_dim = config.fusion_input_dim();
    let fusion_w1 = store.add(
        "fusion.w1",
        uniform_init(rng, &[config.fusion_hidden, in_dim], in_dim),
    );
    let fusion_b1 = store.add("fusion.b1", Tensor::zeros(&[config.fusion_hidden]));
    let fusion_w2 = store.add(
        "fusion.w2",
        uniform_init(rng, &[config.fusion_hidden], config.fusion_hidden),
    );
    let fusion_b2 = store.add("fusion.b2", Tensor::scalar(0.0));

    ModelParams {
        store,
        ids: ParamIds {
            user_emb,
            loc_emb,
            time_emb,
            lstm_w_x,
            lstm_w_h,
            lstm_bias,
            pp_v,
            pp_omega,
            pp_b,
            gat,
            fusion_w1,
            fusion_b1,
            fusion_w2,
            fusion_b2,
        },
    }
}

/// Where a pair forward finds the propagated relation embeddings.
pub enum RelSource<'a> {
    /// The propagated matrix lives on the same tape (single-tape forward).
    OnTape(ValueId),
    /// Row values come from a shared upstream tape; the pair tape tracks
    /// them as inputs and reports their gradients for re-seeding.
    External(&'a Tensor),
}

/// Per-tape cache of user time-series encodings so a user appearing in
/// several pairs of one chunk is encoded once.
#[derive(Default)]
pub struct EncodeCache {
    entries: HashMap<UserId, (Vec<ValueId>, ValueId)>,
}

/// Output handles of one pair forward.
pub struct PairNodes {
    pub y_hat: ValueId,
    /// Point-process negative log-likelihood of the two trajectories.
    pub pp: Option<ValueId>,
    /// Tracked relation-row leaves, one per user, present only in
    /// [`RelSource::External`] mode.
    pub rel_vars: Vec<(UserId, ValueId)>,
}

/// Builds the full matching forward for one user pair on `tape`:
/// concatenates the enabled views, applies the fusion layers and the final
/// sigmoid, and (when active) the point-process loss term.
#[allow(clippy::too_many_arguments)]
pub fn build_pair<R: Rng>(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    u_m: UserId,
    u_n: UserId,
    rel: Option<&RelSource>,
    cache: &mut EncodeCache,
    train: bool,
    rng: &mut R,
) -> Result<PairNodes> {
    let n_users = dataset.num_users() as u32;
    if u_m >= n_users || u_n >= n_users {
        return Err(Error::UnknownUser(u_m.max(u_n).to_string()));
    }
    let traj_m = dataset.trajectory(u_m);
    let traj_n = dataset.trajectory(u_n);
    let mut views: Vec<ValueId> = Vec::with_capacity(3);
    let mut rel_vars = Vec::new();

    if config.views.location {
        let v_loc = location::location_view(
            tape,
            &params.store,
            params.ids.loc_emb,
            &traj_m.location_ids(),
            &traj_n.location_ids(),
            config.k_max,
        )?;
        views.push(v_loc);
    }

    let mut pp = None;
    if config.views.temporal {
        let states_m = encode_cached(tape, params, cache, u_m, dataset)?;
        let states_n = encode_cached(tape, params, cache, u_n, dataset)?;
        let h_m = *states_m.last().expect("non-empty trajectory");
        let h_n = *states_n.last().expect("non-empty trajectory");
        views.push(temporal::v_time(tape, h_m, h_n)?);
        if config.pp_active() {
            let pp_ids = temporal::PpIds {
                v: params.ids.pp_v,
                omega: params.ids.pp_omega,
                b: params.ids.pp_b,
            };
            let term = temporal::pp_loss(
                tape,
                &params.store,
                pp_ids,
                &states_m,
                &traj_m.hours(),
                &states_n,
                &traj_n.hours(),
            )?;
            pp = Some(term);
        }
    }

    if config.views.relation {
        let rel = rel.ok_or_else(|| {
            Error::Invalid("relation view enabled but no propagated embeddings given".into())
        })?;
        let (z_m, z_n) = match rel {
            RelSource::OnTape(z) => (tape.row(*z, u_m as usize)?, tape.row(*z, u_n as usize)?),
            RelSource::External(z) => {
                let z_m = tape.var(Tensor::vector(z.row(u_m as usize).to_vec()));
                let z_n = tape.var(Tensor::vector(z.row(u_n as usize).to_vec()));
                rel_vars.push((u_m, z_m));
                rel_vars.push((u_n, z_n));
                (z_m, z_n)
            }
        };
        views.push(relation::v_rel(tape, z_m, z_n)?);
    }

    let features = tape.concat(&views)?;
    let w1 = params.store.leaf(tape, params.ids.fusion_w1);
    let b1 = params.store.leaf(tape, params.ids.fusion_b1);
    let lin = tape.matvec(w1, features)?;
    let lin = tape.add(lin, b1)?;
    let act = tape.elu(lin);
    let act = tape.dropout(act, config.dropout, train, rng);
    let w2 = params.store.leaf(tape, params.ids.fusion_w2);
    let b2 = params.store.leaf(tape, params.ids.fusion_b2);
    let logit = tape.dot(w2, act)?;
    let logit = tape.add(logit, b2)?;
    let y_hat = tape.sigmoid(logit);

    Ok(PairNodes { y_hat, pp, rel_vars })
}

fn encode_cached(
    tape: &mut Tape,
    params: &ModelParams,
    cache: &mut EncodeCache,
    user: UserId,
    dataset: &Dataset,
) -> Result<Vec<ValueId>> {
    if let Some((states, _)) = cache.entries.get(&user) {
        return Ok(states.clone());
    }
    let lstm = temporal::LstmIds {
        w_x: params.ids.lstm_w_x,
        w_h: params.ids.lstm_w_h,
        bias: params.ids.lstm_bias,
    };
    let series = temporal::TimeSeriesInput::from_trajectory(dataset.trajectory(user))?;
    let states = temporal::encode(tape, &params.store, params.ids.time_emb, lstm, &series)?;
    let last = *states.last().expect("encode returns at least one state");
    cache.entries.insert(user, (states.clone(), last));
    Ok(states)
}

/// Binary cross-entropy on a clamped probability node.
pub fn ce_loss_node(tape: &mut Tape, y_hat: ValueId, label: bool) -> Result<ValueId> {
    let p = tape.clamp(y_hat, PROB_EPS, 1.0 - PROB_EPS);
    let node = if label {
        let lp = tape.log(p);
        tape.scale(lp, -1.0)
    } else {
        let one_minus = tape.scale(p, -1.0);
        let one_minus = tape.add_const(one_minus, 1.0);
        let lp = tape.log(one_minus);
        tape.scale(lp, -1.0)
    };
    Ok(node)
}

/// Scalar cross-entropy used outside the tape (reports, tests).
pub fn ce_loss(y_hat: Real, label: bool) -> Real {
    let p = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Scores one pair on a private tape; returns the link probability and the
/// point-process loss contribution. Evaluation callers pass `train = false`
/// so dropout is inert.
pub fn score_pair<R: Rng>(
    dataset: &Dataset,
    params: &ModelParams,
    config: &ModelConfig,
    u_m: UserId,
    u_n: UserId,
    train: bool,
    rng: &mut R,
) -> Result<(Real, Real)> {
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
    let nodes = build_pair(
        &mut tape,
        params,
        config,
        dataset,
        u_m,
        u_n,
        rel_src.as_ref(),
        &mut cache,
        train,
        rng,
    )?;
    let y = tape.value(nodes.y_hat).item();
    let pp = nodes.pp.map_or(0.0, |n| tape.value(n).item());
    Ok((y, pp))
}
