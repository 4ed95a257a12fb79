//! Raw check-in ingestion: parsing, region and activity filtering,
//! trajectory truncation, edge splitting and evaluation-candidate sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Edge, Vocab};
use crate::error::{Error, Result};
use crate::types::{CheckIn, Trajectory, UserId, HOURS_PER_DAY};

/// Supported raw check-in file layouts. Both carry five tab-separated
/// fields: user id, ISO-8601 timestamp, latitude, longitude, location id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckinFormat {
    GowallaTsv,
    FoursquareTsv,
}

impl std::str::FromStr for CheckinFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gowalla_tsv" => Ok(CheckinFormat::GowallaTsv),
            "foursquare_tsv" => Ok(CheckinFormat::FoursquareTsv),
            other => Err(Error::Config(format!("unknown check-in format {other}"))),
        }
    }
}

/// One parsed raw check-in row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub user: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub location: String,
}

/// Geographic bounding box plus the minimum fraction of a user's check-ins
/// that must fall inside it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RegionFilter {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub min_in_region_fraction: f64,
}

impl RegionFilter {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64, fraction: f64) -> Result<Self> {
        let f = RegionFilter {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            min_in_region_fraction: fraction,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(Error::Config("bounding box must have positive extent".into()));
        }
        if !(0.0..=1.0).contains(&self.min_in_region_fraction) {
            return Err(Error::Config("min fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Approximate New York City box. Non-authoritative: shipped for
    /// convenience, not a reference for reproducing published counts.
    pub fn nyc(fraction: f64) -> Self {
        RegionFilter {
            lat_min: 40.55,
            lat_max: 40.95,
            lon_min: -74.05,
            lon_max: -73.65,
            min_in_region_fraction: fraction,
        }
    }

    /// Approximate Los Angeles box; same caveat as [`RegionFilter::nyc`].
    pub fn la(fraction: f64) -> Self {
        RegionFilter {
            lat_min: 33.70,
            lat_max: 34.35,
            lon_min: -118.67,
            lon_max: -117.95,
            min_in_region_fraction: fraction,
        }
    }

    /// Whole-planet box (synthetic data, tests).
    pub fn world() -> Self {
        RegionFilter {
            lat_min: -90.0,
            lat_max: 90.0,
            lon_min: -180.0,
            lon_max: 180.0,
            min_in_region_fraction: 0.0,
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }

    /// Parses either a preset name (`nyc`, `la`, `world`) or four
    /// comma-separated degrees `latmin,latmax,lonmin,lonmax`.
    pub fn parse(spec: &str, fraction: f64) -> Result<Self> {
        match spec {
            "nyc" => return Ok(Self::nyc(fraction)),
            "la" => return Ok(Self::la(fraction)),
            "world" => {
                let mut w = Self::world();
                w.min_in_region_fraction = fraction;
                return Ok(w);
            }
            _ => {}
        }
        let parts: Vec<f64> = spec
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad bbox {spec:?}: {e}")))?;
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "bbox needs 4 numbers latmin,latmax,lonmin,lonmax, got {}",
                parts.len()
            )));
        }
        Self::new(parts[0], parts[1], parts[2], parts[3], fraction)
    }
}

/// Minimum friends and check-ins a user must keep to survive filtering.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct ActivityFilter {
    pub min_friends: usize,
    pub min_checkins: usize,
}

impl Default for ActivityFilter {
    fn default() -> Self {
        ActivityFilter {
            min_friends: 1,
            min_checkins: 10,
        }
    }
}

/// Everything that parameterizes preprocessing; hashed into the dataset
/// fingerprint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessConfig {
    pub format: CheckinFormat,
    pub region: RegionFilter,
    pub activity: ActivityFilter,
    pub k_max: usize,
    pub split_ratios: (f64, f64, f64),
    pub eval_negatives: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            format: CheckinFormat::GowallaTsv,
            region: RegionFilter::world(),
            activity: ActivityFilter::default(),
            k_max: 200,
            split_ratios: (0.8, 0.1, 0.1),
            eval_negatives: 50,
            seed: 0,
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.with_timezone(&Utc).timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    None
}

/// Parses a raw check-in file into rows, preserving file order. Both
/// supported formats share the five-field layout.
pub fn parse_checkins(path: &Path, _format: CheckinFormat) -> Result<Vec<RawRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let timestamp = parse_timestamp(fields[1]).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("unparseable timestamp {:?}", fields[1]),
        })?;
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad {what} {s:?}"),
            })
        };
        rows.push(RawRow {
            user: fields[0].to_string(),
            timestamp,
            lat: parse_f(fields[2], "latitude")?,
            lon: parse_f(fields[3], "longitude")?,
            location: fields[4].to_string(),
        });
    }
    Ok(rows)
}

/// Parses an edge file: two tab-separated raw user ids per line.
pub fn parse_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (a, b) = (it.next(), it.next());
        match (a, b) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                edges.push((a.to_string(), b.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected two tab-separated user ids".into(),
                })
            }
        }
    }
    Ok(edges)
}

/// Keeps users whose in-region check-in fraction reaches the threshold and
/// drops their out-of-region check-ins, so the location vocabulary stays
/// local to the region.
pub fn apply_region_filter(
    rows: &[RawRow],
    filter: &RegionFilter,
) -> BTreeMap<String, Vec<RawRow>> {
    let mut by_user: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        by_user.entry(row.user.clone()).or_default().push(row.clone());
    }
    let mut kept = BTreeMap::new();
    for (user, rows) in by_user {
        let total = rows.len();
        let in_region: Vec<RawRow> = rows
            .into_iter()
            .filter(|r| filter.contains(r.lat, r.lon))
            .collect();
        if total > 0 && in_region.len() as f64 / total as f64 >= filter.min_in_region_fraction {
            if !in_region.is_empty() {
                kept.insert(user, in_region);
            }
        }
    }
    kept
}

/// Iterates removal of users below either activity threshold until a fixed
/// point; removing a user strips their edges, which can push neighbors
/// below the friend threshold.
pub fn apply_activity_filter(
    mut trajectories: BTreeMap<String, Vec<RawRow>>,
    edges: &[(String, String)],
    filter: &ActivityFilter,
) -> (BTreeMap<String, Vec<RawRow>>, Vec<(String, String)>) {
    let mut edge_set: BTreeSet<(String, String)> = edges
        .iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        })
        .filter(|(a, b)| trajectories.contains_key(a) && trajectories.contains_key(b))
        .collect();

    loop {
        let mut degree: HashMap<&String, usize> = HashMap::new();
        for (a, b) in &edge_set {
            *degree.entry(a).or_default() += 1;
            *degree.entry(b).or_default() += 1;
        }
        let doomed: BTreeSet<String> = trajectories
            .iter()
            .filter(|(user, rows)| {
                rows.len() < filter.min_checkins
                    || degree.get(user).copied().unwrap_or(0) < filter.min_friends
            })
            .map(|(user, _)| user.clone())
            .collect();
        if doomed.is_empty() {
            break;
        }
        trajectories.retain(|user, _| !doomed.contains(user));
        edge_set.retain(|(a, b)| !doomed.contains(a) && !doomed.contains(b));
    }
    (trajectories, edge_set.into_iter().collect())
}

/// Keeps the most recent `k_max` events, order preserved.
pub fn truncate_trajectory(traj: Trajectory, k_max: usize) -> Trajectory {
    let len = traj.events.len();
    if len <= k_max {
        return traj;
    }
    Trajectory {
        user: traj.user,
        events: traj.events[len - k_max..].to_vec(),
    }
}

/// Deterministic random split into train/val/test. Sizes are within one
/// edge of the exact ratios; val and test round to nearest.
pub fn split_edges(
    edges: &BTreeSet<Edge>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> (BTreeSet<Edge>, BTreeSet<Edge>, BTreeSet<Edge>) {
    let mut list: Vec<Edge> = edges.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    list.shuffle(&mut rng);
    let n = list.len();
    let n_val = (ratios.1 * n as f64).round() as usize;
    let n_test = (ratios.2 * n as f64).round() as usize;
    let n_train = n - n_val - n_test;
    let train = list[..n_train].iter().copied().collect();
    let val = list[n_train..n_train + n_val].iter().copied().collect();
    let test = list[n_train + n_val..].iter().copied().collect();
    (train, val, test)
}

/// Which split's users a candidate set targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

/// One target user's ranking pool: its held-out positives plus sampled
/// negatives unlinked to it in every split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CandidatePool {
    pub positives: Vec<UserId>,
    pub negatives: Vec<UserId>,
}

/// Candidate pools for every target user of a split.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct CandidateSet {
    pub pools: BTreeMap<UserId, CandidatePool>,
}

impl CandidateSet {
    pub fn num_pairs(&self) -> usize {
        self.pools
            .values()
            .map(|p| p.positives.len() + p.negatives.len())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("candidate set serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&raw).map_err(|e| Error::DatasetFormat(e.to_string()))
    }
}

/// Samples `per_user` distinct negatives for every user incident to an edge
/// of the chosen split. A negative must not be linked to the target in any
/// split. Errors if a user has too few unlinked users available.
pub fn sample_eval_candidates(
    dataset: &Dataset,
    per_user: usize,
    seed: u64,
    split: EvalSplit,
) -> Result<CandidateSet> {
    let edges = match split {
        EvalSplit::Val => &dataset.val_edges,
        EvalSplit::Test => &dataset.test_edges,
    };
    let n = dataset.num_users() as u32;
    let mut linked: HashMap<UserId, HashSet<UserId>> = HashMap::new();
    for e in dataset.all_edges() {
        linked.entry(e.0).or_default().insert(e.1);
        linked.entry(e.1).or_default().insert(e.0);
    }

    let mut targets: BTreeMap<UserId, Vec<UserId>> = BTreeMap::new();
    for e in edges {
        targets.entry(e.0).or_default().push(e.1);
        targets.entry(e.1).or_default().push(e.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = BTreeMap::new();
    for (user, mut positives) in targets {
        positives.sort_unstable();
        let user_links = linked.get(&user).cloned().unwrap_or_default();
        let available = n as usize - 1 - user_links.len();
        if available < per_user {
            return Err(Error::InsufficientNegatives(
                dataset.users.raw(user).to_string(),
            ));
        }
        let mut negatives: Vec<UserId> = Vec::with_capacity(per_user);
        let mut seen: HashSet<UserId> = HashSet::new();
        while negatives.len() < per_user {
            let cand = rng.gen_range(0..n);
            if cand == user || user_links.contains(&cand) || !seen.insert(cand) {
                continue;
            }
            negatives.push(cand);
        }
        pools.insert(user, CandidatePool { positives, negatives });
    }
    Ok(CandidateSet { pools })
}

/// Output of the full preprocessing pipeline.
#[derive(Debug)]
pub struct PreprocessOutput {
    pub dataset: Dataset,
    pub candidates: CandidateSet,
    /// Users dropped by the region filter and by the activity fixed point.
    pub dropped_region: usize,
    pub dropped_activity: usize,
}

/// Runs the whole pipeline on parsed rows and raw edges.
pub fn preprocess(
    rows: &[RawRow],
    raw_edges: &[(String, String)],
    config: &PreprocessConfig,
) -> Result<PreprocessOutput> {
    config.region.validate()?;
    let users_before = rows
        .iter()
        .map(|r| r.user.as_str())
        .collect::<HashSet<_>>()
        .len();

    let kept = apply_region_filter(rows, &config.region);
    let dropped_region = users_before - kept.len();
    let users_after_region = kept.len();

    let (kept, edges) = apply_activity_filter(kept, raw_edges, &config.activity);
    let dropped_activity = users_after_region - kept.len();
    if kept.is_empty() {
        return Err(Error::Invalid(
            "no users survive filtering; relax the thresholds".into(),
        ));
    }

    let users = Vocab::from_ids(kept.keys().cloned().collect());

    // truncate, then build the location vocabulary from surviving events only
    let mut truncated: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (user, mut rows) in kept {
        rows.sort_by_key(|r| r.timestamp);
        if rows.len() > config.k_max {
            rows.drain(..rows.len() - config.k_max);
        }
        truncated.insert(user, rows);
    }
    let locations = Vocab::from_ids(
        truncated
            .values()
            .flatten()
            .map(|r| r.location.clone())
            .collect(),
    );

    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(users.len());
    for (user, rows) in &truncated {
        let uid = users.get(user).expect("user in vocab");
        let events = rows
            .iter()
            .map(|r| CheckIn::new(locations.get(&r.location).expect("loc in vocab"), r.timestamp))
            .collect();
        trajectories.push(Trajectory::new(uid, events));
    }
    trajectories.sort_by_key(|t| t.user);

    let edge_set: BTreeSet<Edge> = edges
        .iter()
        .map(|(a, b)| Edge::new(users.get(a).unwrap(), users.get(b).unwrap()))
        .collect();
    let (train, val, test) = split_edges(
        &edge_set,
        config.split_ratios,
        crate::manifest::derive_seed(config.seed, "split"),
    );

    let fingerprint = fingerprint_config(config);
    let dataset = Dataset::new(
        users,
        locations,
        HOURS_PER_DAY,
        config.k_max,
        fingerprint,
        trajectories,
        train,
        val,
        test,
    )?;
    let candidates = sample_eval_candidates(
        &dataset,
        config.eval_negatives,
        crate::manifest::derive_seed(config.seed, "candidates"),
        EvalSplit::Test,
    )?;
    Ok(PreprocessOutput {
        dataset,
        candidates,
        dropped_region,
        dropped_activity,
    })
}

/// Convenience wrapper reading the two raw files.
pub fn preprocess_files(
    checkins: &Path,
    edges: &Path,
    config: &PreprocessConfig,
) -> Result<PreprocessOutput> {
    let rows = parse_checkins(checkins, config.format)?;
    let raw_edges = parse_edges(edges)?;
    preprocess(&rows, &raw_edges, config)
}

pub fn fingerprint_config(config: &PreprocessConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex_string(&hasher.finalize())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
