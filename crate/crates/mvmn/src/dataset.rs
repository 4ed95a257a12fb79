//! The processed dataset: vocabularies, trajectories, link splits, and the
//! line-oriented JSON file format they are stored in.
//!
//! File layout (one JSON document per line):
//!   1. a `header` record with both vocabularies, the time-bin count, the
//!      maximal trajectory length and a fingerprint of the preprocessing
//!      config;
//!   2. one `trajectory` record per user, events as `[location, timestamp]`
//!      pairs;
//!   3. three `split` records (`train`, `val`, `test`) listing edges.
//!
//! The field names below are a stable format; the training adjacency is not
//! stored but rebuilt from the train split on load.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CheckIn, Trajectory, UserId};

/// An unordered user pair, stored as (min, max) so no duplicate directed
/// entries can exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub UserId, pub UserId);

impl Edge {
    pub fn new(a: UserId, b: UserId) -> Self {
        debug_assert_ne!(a, b);
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn contains(&self, u: UserId) -> bool {
        self.0 == u || self.1 == u
    }

    pub fn other(&self, u: UserId) -> UserId {
        if self.0 == u {
            self.1
        } else {
            self.0
        }
    }
}

/// Bidirectional mapping between raw string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from raw ids, sorted for determinism.
    pub fn from_ids(mut ids: Vec<String>) -> Self {
        ids.sort();
        ids.dedup();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.ids
    }
}

/// The processed dataset every downstream stage consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: Vocab,
    pub locations: Vocab,
    pub time_bins: usize,
    pub k_max: usize,
    pub fingerprint: String,
    /// Indexed by user id; every user has a non-empty trajectory.
    pub trajectories: Vec<Trajectory>,
    pub train_edges: BTreeSet<Edge>,
    pub val_edges: BTreeSet<Edge>,
    pub test_edges: BTreeSet<Edge>,
    /// Per-user neighbor lists from train edges only, each including the
    /// user itself. Rebuilt on load, never stored.
    pub train_adjacency: Vec<Vec<UserId>>,
}

impl Dataset {
    pub fn new(
        users: Vocab,
        locations: Vocab,
        time_bins: usize,
        k_max: usize,
        fingerprint: String,
        trajectories: Vec<Trajectory>,
        train_edges: BTreeSet<Edge>,
        val_edges: BTreeSet<Edge>,
        test_edges: BTreeSet<Edge>,
    ) -> Result<Self> {
        let n = users.len();
        if trajectories.len() != n {
            return Err(Error::DatasetFormat(format!(
                "{} trajectories for {} users",
                trajectories.len(),
                n
            )));
        }
        for (splits, name) in [
            (train_edges.intersection(&val_edges).count(), "train/val"),
            (train_edges.intersection(&test_edges).count(), "train/test"),
            (val_edges.intersection(&test_edges).count(), "val/test"),
        ] {
            if splits != 0 {
                return Err(Error::DatasetFormat(format!("{name} splits overlap")));
            }
        }
        for e in train_edges.iter().chain(&val_edges).chain(&test_edges) {
            if e.0 as usize >= n || e.1 as usize >= n {
                return Err(Error::DatasetFormat(format!(
                    "edge ({}, {}) outside user vocabulary",
                    e.0, e.1
                )));
            }
        }
        let train_adjacency = build_adjacency(n, &train_edges);
        Ok(Dataset {
            users,
            locations,
            time_bins,
            k_max,
            fingerprint,
            trajectories,
            train_edges,
            val_edges,
            test_edges,
            train_adjacency,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn trajectory(&self, u: UserId) -> &Trajectory {
        &self.trajectories[u as usize]
    }

    /// Union of all three splits; the "known links" view used by analyses.
    pub fn all_edges(&self) -> BTreeSet<Edge> {
        self.train_edges
            .iter()
            .chain(&self.val_edges)
            .chain(&self.test_edges)
            .copied()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let mut write = |line: &str| -> Result<()> {
            writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))
        };

        let header = HeaderRecord {
            kind: "header",
            version: 1,
            users: self.users.raw_ids().to_vec(),
            locations: self.locations.raw_ids().to_vec(),
            time_bins: self.time_bins,
            k_max: self.k_max,
            fingerprint: self.fingerprint.clone(),
        };
        write(&serde_json::to_string(&header).expect("header serializes"))?;

        for t in &self.trajectories {
            let rec = TrajectoryRecord {
                kind: "trajectory",
                user: t.user,
                events: t.events.iter().map(|c| (c.location, c.timestamp)).collect(),
            };
            write(&serde_json::to_string(&rec).expect("trajectory serializes"))?;
        }
        for (name, edges) in [
            ("train", &self.train_edges),
            ("val", &self.val_edges),
            ("test", &self.test_edges),
        ] {
            let rec = SplitRecord {
                kind: "split",
                name,
                edges: edges.iter().map(|e| (e.0, e.1)).collect(),
            };
            write(&serde_json::to_string(&rec).expect("split serializes"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = std::io::BufReader::new(file);
        let mut header: Option<HeaderOwned> = None;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut splits: HashMap<String, BTreeSet<Edge>> = HashMap::new();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
                Error::DatasetFormat(format!("line {}: {e}", lineno + 1))
            })?;
            match value.get("kind").and_then(|k| k.as_str()) {
                Some("header") => {
                    let h: HeaderOwned = serde_json::from_value(value)
                        .map_err(|e| Error::DatasetFormat(e.to_string()))?;
                    header = Some(h);
                }
                Some("trajectory") => {
                    let r: TrajectoryOwned = serde_json::from_value(value)
                        .map_err(|e| Error::DatasetFormat(e.to_string()))?;
                    let events = r
                        .events
                        .into_iter()
                        .map(|(l, t)| CheckIn::new(l, t))
                        .collect();
                    trajectories.push(Trajectory::new(r.user, events));
                }
                Some("split") => {
                    let r: SplitOwned = serde_json::from_value(value)
                        .map_err(|e| Error::DatasetFormat(e.to_string()))?;
                    let edges = r.edges.into_iter().map(|(a, b)| Edge::new(a, b)).collect();
                    splits.insert(r.name, edges);
                }
                other => {
                    return Err(Error::DatasetFormat(format!(
                        "line {}: unknown record kind {other:?}",
                        lineno + 1
                    )))
                }
            }
        }

        let header = header.ok_or_else(|| Error::DatasetFormat("missing header".into()))?;
        trajectories.sort_by_key(|t| t.user);
        let mut take = |name: &str| -> Result<BTreeSet<Edge>> {
            splits
                .remove(name)
                .ok_or_else(|| Error::DatasetFormat(format!("missing {name} split")))
        };
        let (train, val, test) = (take("train")?, take("val")?, take("test")?);
        Dataset::new(
            Vocab::from_ids(header.users),
            Vocab::from_ids(header.locations),
            header.time_bins,
            header.k_max,
            header.fingerprint,
            trajectories,
            train,
            val,
            test,
        )
    }
}

/// Neighbor lists (self-loop included) from an edge set.
pub fn build_adjacency(num_users: usize, edges: &BTreeSet<Edge>) -> Vec<Vec<UserId>> {
    let mut adj: Vec<Vec<UserId>> = (0..num_users).map(|u| vec![u as UserId]).collect();
    for e in edges {
        adj[e.0 as usize].push(e.1);
        adj[e.1 as usize].push(e.0);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

#[derive(Serialize)]
struct HeaderRecord<'a> {
    kind: &'a str,
    version: u32,
    users: Vec<String>,
    locations: Vec<String>,
    time_bins: usize,
    k_max: usize,
    fingerprint: String,
}

#[derive(Deserialize)]
struct HeaderOwned {
    #[allow(dead_code)]
    version: u32,
    users: Vec<String>,
    locations: Vec<String>,
    time_bins: usize,
    k_max: usize,
    fingerprint: String,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    kind: &'a str,
    user: UserId,
    events: Vec<(u32, i64)>,
}

#[derive(Deserialize)]
struct TrajectoryOwned {
    user: UserId,
    events: Vec<(u32, i64)>,
}

#[derive(Serialize)]
struct SplitRecord<'a> {
    kind: &'a str,
    name: &'a str,
    edges: Vec<(UserId, UserId)>,
}

#[derive(Deserialize)]
struct SplitOwned {
    name: String,
    edges: Vec<(UserId, UserId)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_users = 8;
        let n_locs = 5;
        let users = Vocab::from_ids((0..n_users).map(|i| format!("u{i}")).collect());
        let locations = Vocab::from_ids((0..n_locs).map(|i| format!("l{i}")).collect());
        let trajectories = (0..n_users)
            .map(|u| {
                let events = (0..rng.gen_range(1..6))
                    .map(|_| {
                        CheckIn::new(rng.gen_range(0..n_locs) as u32, rng.gen_range(0..1_000_000))
                    })
                    .collect();
                Trajectory::new(u as u32, events)
            })
            .collect();
        let mut all: Vec<Edge> = Vec::new();
        for a in 0..n_users as u32 {
            for b in (a + 1)..n_users as u32 {
                if rng.gen_bool(0.4) {
                    all.push(Edge::new(a, b));
                }
            }
        }
        all.shuffle(&mut rng);
        let k = all.len();
        let train: BTreeSet<Edge> = all[..k * 8 / 10].iter().copied().collect();
        let val: BTreeSet<Edge> = all[k * 8 / 10..k * 9 / 10].iter().copied().collect();
        let test: BTreeSet<Edge> = all[k * 9 / 10..].iter().copied().collect();
        Dataset::new(
            users,
            locations,
            24,
            200,
            "test".into(),
            trajectories,
            train,
            val,
            test,
        )
        .unwrap()
    }

    #[test]
    fn edge_is_unordered() {
        assert_eq!(Edge::new(3, 1), Edge::new(1, 3));
        assert_eq!(Edge::new(1, 3).other(1), 3);
    }

    #[test]
    fn adjacency_contains_self_and_train_neighbors_only() {
        let ds = toy_dataset(7);
        for u in 0..ds.num_users() as u32 {
            let adj = &ds.train_adjacency[u as usize];
            assert!(adj.contains(&u), "self-loop missing for {u}");
            let expected: BTreeSet<UserId> = ds
                .train_edges
                .iter()
                .filter(|e| e.contains(u))
                .map(|e| e.other(u))
                .chain(std::iter::once(u))
                .collect();
            let got: BTreeSet<UserId> = adj.iter().copied().collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        for seed in [1, 2, 3] {
            let ds = toy_dataset(seed);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("data.jsonl");
            ds.save(&path).unwrap();
            let back = Dataset::load(&path).unwrap();
            assert_eq!(back.users, ds.users);
            assert_eq!(back.locations, ds.locations);
            assert_eq!(back.trajectories, ds.trajectories);
            assert_eq!(back.train_edges, ds.train_edges);
            assert_eq!(back.val_edges, ds.val_edges);
            assert_eq!(back.test_edges, ds.test_edges);
            assert_eq!(back.train_adjacency, ds.train_adjacency);
        }
    }

    #[test]
    fn overlapping_splits_rejected() {
        let mut ds = toy_dataset(5);
        let e = *ds.train_edges.iter().next().unwrap();
        ds.val_edges.insert(e);
        let res = Dataset::new(
            ds.users,
            ds.locations,
            24,
            200,
            "x".into(),
            ds.trajectories,
            ds.train_edges,
            ds.val_edges,
            ds.test_edges,
        );
        assert!(res.is_err());
    }
}
