//! Exploratory analyses of a processed dataset: how much more temporally
//! similar linked users are than unlinked ones, and how much more often
//! co-locating pairs are linked when the co-location happens within the same
//! hour.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Edge};
use crate::error::{Error, Result};
use crate::types::{
    gap_interval_bin, hour_of_day_bin, Real, Trajectory, UserId, GAP_INTERVALS, HOURS_PER_DAY,
};

/// Per-user temporal histograms: check-ins per hour-of-day frame and
/// inter-event gaps per interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalProfile {
    pub frame_hist: [u64; HOURS_PER_DAY],
    pub gap_hist: [u64; GAP_INTERVALS],
}

/// Builds both histograms for one trajectory.
pub fn profile(traj: &Trajectory) -> TemporalProfile {
    let mut frame_hist = [0u64; HOURS_PER_DAY];
    let mut gap_hist = [0u64; GAP_INTERVALS];
    for c in &traj.events {
        frame_hist[hour_of_day_bin(c.timestamp)] += 1;
    }
    for w in traj.events.windows(2) {
        let dt = (w[1].timestamp - w[0].timestamp) as Real / 3600.0;
        gap_hist[gap_interval_bin(dt).expect("sorted events")] += 1;
    }
    TemporalProfile { frame_hist, gap_hist }
}

/// Which histogram a similarity computation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Frame,
    Gap,
}

fn cosine_counts(a: &[u64], b: &[u64]) -> Option<Real> {
    let na: Real = a.iter().map(|&x| (x * x) as Real).sum::<Real>().sqrt();
    let nb: Real = b.iter().map(|&x| (x * x) as Real).sum::<Real>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: Real = a.iter().zip(b).map(|(&x, &y)| (x * y) as Real).sum();
    Some(dot / (na * nb))
}

/// Mean cosine similarity of the selected histogram over the given pairs.
/// Pairs with a zero histogram are skipped and counted.
pub fn avg_cosine_similarity(
    dataset: &Dataset,
    pairs: &[(UserId, UserId)],
    which: ProfileKind,
) -> (Option<Real>, usize) {
    let profiles: Vec<TemporalProfile> =
        dataset.trajectories.par_iter().map(profile).collect();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for &(a, b) in pairs {
        let (pa, pb) = (&profiles[a as usize], &profiles[b as usize]);
        let sim = match which {
            ProfileKind::Frame => cosine_counts(&pa.frame_hist, &pb.frame_hist),
            ProfileKind::Gap => cosine_counts(&pa.gap_hist, &pb.gap_hist),
        };
        match sim {
            Some(s) => {
                total += s;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        (None, skipped)
    } else {
        (Some(total / used as Real), skipped)
    }
}

/// How "same time" is interpreted for spatio-temporal co-occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Fixed wall-clock buckets of `window_hours` length.
    Bucket,
    /// Any two visits within `window_hours` of each other.
    Sliding,
}

/// Raw counts and ratios for spatial vs spatio-temporal co-occurrence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CooccurrenceReport {
    pub n_l: u64,
    pub n_l_s: u64,
    pub n_lt: u64,
    pub n_lt_s: u64,
    /// Fraction of co-locating pairs that are linked; `None` when no pair
    /// co-locates.
    pub spatial_ratio: Option<Real>,
    /// Fraction of same-location-same-window pairs that are linked.
    pub spatio_temporal_ratio: Option<Real>,
}

/// Counts user pairs sharing at least one location (`n_l`), pairs sharing a
/// location within the same time window (`n_lt`), and how many of each are
/// linked.
pub fn cooccurrence_ratios(
    dataset: &Dataset,
    window_hours: Real,
    mode: WindowMode,
) -> Result<CooccurrenceReport> {
    if dataset.num_users() == 0 {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let linked = dataset.all_edges();

    // pairs sharing any location
    let mut by_location: HashMap<u32, Vec<UserId>> = HashMap::new();
    for t in &dataset.trajectories {
        let mut seen = HashSet::new();
        for c in &t.events {
            if seen.insert(c.location) {
                by_location.entry(c.location).or_default().push(t.user);
            }
        }
    }
    let mut spatial_pairs: HashSet<Edge> = HashSet::new();
    for users in by_location.values() {
        for (i, &a) in users.iter().enumerate() {
            for &b in &users[i + 1..] {
                spatial_pairs.insert(Edge::new(a, b));
            }
        }
    }

    // pairs sharing a location in the same window
    let mut st_pairs: HashSet<Edge> = HashSet::new();
    match mode {
        WindowMode::Bucket => {
            let mut by_loc_bucket: HashMap<(u32, i64), Vec<UserId>> = HashMap::new();
            let window_secs = (window_hours * 3600.0) as i64;
            for t in &dataset.trajectories {
                let mut seen = HashSet::new();
                for c in &t.events {
                    let bucket = c.timestamp.div_euclid(window_secs.max(1));
                    if seen.insert((c.location, bucket)) {
                        by_loc_bucket.entry((c.location, bucket)).or_default().push(t.user);
                    }
                }
            }
            for users in by_loc_bucket.values() {
                for (i, &a) in users.iter().enumerate() {
                    for &b in &users[i + 1..] {
                        st_pairs.insert(Edge::new(a, b));
                    }
                }
            }
        }
        WindowMode::Sliding => {
            // per location: sort events by time, sweep a window
            let mut events_by_loc: HashMap<u32, Vec<(i64, UserId)>> = HashMap::new();
            for t in &dataset.trajectories {
                for c in &t.events {
                    events_by_loc.entry(c.location).or_default().push((c.timestamp, t.user));
                }
            }
            let window_secs = (window_hours * 3600.0) as i64;
            for events in events_by_loc.values_mut() {
                events.sort_unstable();
                let mut lo = 0usize;
                for hi in 0..events.len() {
                    while events[hi].0 - events[lo].0 > window_secs {
                        lo += 1;
                    }
                    for k in lo..hi {
                        if events[k].1 != events[hi].1 {
                            st_pairs.insert(Edge::new(events[k].1, events[hi].1));
                        }
                    }
                }
            }
        }
    }

    let n_l = spatial_pairs.len() as u64;
    let n_l_s = spatial_pairs.iter().filter(|e| linked.contains(e)).count() as u64;
    let n_lt = st_pairs.len() as u64;
    let n_lt_s = st_pairs.iter().filter(|e| linked.contains(e)).count() as u64;
    Ok(CooccurrenceReport {
        n_l,
        n_l_s,
        n_lt,
        n_lt_s,
        spatial_ratio: (n_l > 0).then(|| n_l_s as Real / n_l as Real),
        spatio_temporal_ratio: (n_lt > 0).then(|| n_lt_s as Real / n_lt as Real),
    })
}

/// Samples unlinked user pairs as the similarity baseline, at most
/// `factor * linked` of them.
pub fn sample_unlinked_pairs(
    dataset: &Dataset,
    factor: usize,
    seed: u64,
) -> Vec<(UserId, UserId)> {
    let linked = dataset.all_edges();
    let n = dataset.num_users() as u32;
    let max_pairs = (n as u64 * (n as u64 - 1) / 2).saturating_sub(linked.len() as u64);
    let want = ((linked.len() * factor) as u64).min(max_pairs) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(want);
    let mut seen: BTreeSet<Edge> = BTreeSet::new();
    while out.len() < want {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let e = Edge::new(a, b);
        if linked.contains(&e) || !seen.insert(e) {
            continue;
        }
        out.push((e.0, e.1));
    }
    out
}

/// The full report emitted by the `analyze` command: plot-ready numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub num_users: usize,
    pub num_linked_pairs: usize,
    pub num_unlinked_pairs_sampled: usize,
    pub frame_similarity_linked: Option<Real>,
    pub frame_similarity_unlinked: Option<Real>,
    pub gap_similarity_linked: Option<Real>,
    pub gap_similarity_unlinked: Option<Real>,
    pub skipped_pairs_frame: usize,
    pub skipped_pairs_gap: usize,
    pub cooccurrence: CooccurrenceReport,
}

/// Runs every analysis with the stated window settings.
pub fn analyze(
    dataset: &Dataset,
    window_hours: Real,
    mode: WindowMode,
    seed: u64,
) -> Result<AnalysisReport> {
    let linked: Vec<(UserId, UserId)> =
        dataset.all_edges().iter().map(|e| (e.0, e.1)).collect();
    let unlinked = sample_unlinked_pairs(dataset, 10, seed);

    let (frame_l, skip_f1) = avg_cosine_similarity(dataset, &linked, ProfileKind::Frame);
    let (frame_u, skip_f2) = avg_cosine_similarity(dataset, &unlinked, ProfileKind::Frame);
    let (gap_l, skip_g1) = avg_cosine_similarity(dataset, &linked, ProfileKind::Gap);
    let (gap_u, skip_g2) = avg_cosine_similarity(dataset, &unlinked, ProfileKind::Gap);
    let cooccurrence = cooccurrence_ratios(dataset, window_hours, mode)?;

    Ok(AnalysisReport {
        num_users: dataset.num_users(),
        num_linked_pairs: linked.len(),
        num_unlinked_pairs_sampled: unlinked.len(),
        frame_similarity_linked: frame_l,
        frame_similarity_unlinked: frame_u,
        gap_similarity_linked: gap_l,
        gap_similarity_unlinked: gap_u,
        skipped_pairs_frame: skip_f1 + skip_f2,
        skipped_pairs_gap: skip_g1 + skip_g2,
        cooccurrence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Vocab;
    use crate::types::CheckIn;
    use std::collections::BTreeSet;

    fn dataset_from(
        trajs: Vec<Vec<CheckIn>>,
        edges: &[(u32, u32)],
        n_locs: usize,
    ) -> Dataset {
        let n = trajs.len();
        let users = Vocab::from_ids((0..n).map(|i| format!("u{i:02}")).collect());
        let locations = Vocab::from_ids((0..n_locs).map(|i| format!("l{i}")).collect());
        let trajectories = trajs
            .into_iter()
            .enumerate()
            .map(|(u, events)| Trajectory::new(u as u32, events))
            .collect();
        let train: BTreeSet<Edge> = edges.iter().map(|&(a, b)| Edge::new(a, b)).collect();
        Dataset::new(
            users,
            locations,
            24,
            200,
            "t".into(),
            trajectories,
            train,
            BTreeSet::new(),
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn profile_single_checkin() {
        let t = Trajectory::new(0, vec![CheckIn::new(0, 5 * 3600)]);
        let p = profile(&t);
        assert_eq!(p.frame_hist[5], 1);
        assert_eq!(p.frame_hist.iter().sum::<u64>(), 1);
        assert!(p.gap_hist.iter().all(|&c| c == 0));
    }

    #[test]
    fn profile_half_hour_gap_lands_in_first_interval() {
        let t = Trajectory::new(0, vec![CheckIn::new(0, 0), CheckIn::new(1, 1800)]);
        let p = profile(&t);
        assert_eq!(p.gap_hist[0], 1);
        assert_eq!(p.gap_hist.iter().sum::<u64>(), 1);
    }

    #[test]
    fn profile_totals_match_lengths() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let mut t0 = 0i64;
            let events: Vec<CheckIn> = (0..n)
                .map(|_| {
                    t0 += rng.gen_range(0..200_000);
                    CheckIn::new(rng.gen_range(0..5), t0)
                })
                .collect();
            let t = Trajectory::new(0, events);
            let p = profile(&t);
            assert_eq!(p.frame_hist.iter().sum::<u64>(), n as u64);
            assert_eq!(p.gap_hist.iter().sum::<u64>(), n as u64 - 1);
        }
    }

    #[test]
    fn identical_profiles_have_similarity_one() {
        let events = vec![CheckIn::new(0, 0), CheckIn::new(0, 3600)];
        let ds = dataset_from(vec![events.clone(), events], &[(0, 1)], 1);
        let (sim, skipped) = avg_cosine_similarity(&ds, &[(0, 1)], ProfileKind::Frame);
        assert!((sim.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn disjoint_support_profiles_have_similarity_zero() {
        let a = vec![CheckIn::new(0, 0)]; // hour 0
        let b = vec![CheckIn::new(0, 12 * 3600)]; // hour 12
        let ds = dataset_from(vec![a, b], &[(0, 1)], 1);
        let (sim, _) = avg_cosine_similarity(&ds, &[(0, 1)], ProfileKind::Frame);
        assert_eq!(sim, Some(0.0));
    }

    #[test]
    fn zero_gap_histograms_are_skipped_and_counted() {
        let a = vec![CheckIn::new(0, 0)]; // single event: empty gap hist
        let b = vec![CheckIn::new(0, 0), CheckIn::new(0, 3600)];
        let ds = dataset_from(vec![a, b], &[(0, 1)], 1);
        let (sim, skipped) = avg_cosine_similarity(&ds, &[(0, 1)], ProfileKind::Gap);
        assert_eq!(sim, None);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn two_linked_cooccurring_users_give_ratio_one() {
        let a = vec![CheckIn::new(0, 100)];
        let b = vec![CheckIn::new(0, 200)]; // same location, same hour bucket
        let ds = dataset_from(vec![a, b], &[(0, 1)], 1);
        let rep = cooccurrence_ratios(&ds, 1.0, WindowMode::Bucket).unwrap();
        assert_eq!(rep.spatial_ratio, Some(1.0));
        assert_eq!(rep.spatio_temporal_ratio, Some(1.0));
        assert_eq!((rep.n_l, rep.n_l_s, rep.n_lt, rep.n_lt_s), (1, 1, 1, 1));
    }

    #[test]
    fn no_shared_locations_is_undefined() {
        let a = vec![CheckIn::new(0, 0)];
        let b = vec![CheckIn::new(1, 0)];
        let ds = dataset_from(vec![a, b], &[(0, 1)], 2);
        let rep = cooccurrence_ratios(&ds, 1.0, WindowMode::Bucket).unwrap();
        assert_eq!(rep.n_l, 0);
        assert_eq!(rep.spatial_ratio, None);
    }

    /// Quadratic brute-force oracle over all user pairs.
    fn brute_force_counts(ds: &Dataset, window_secs: i64) -> (u64, u64, u64, u64) {
        let linked = ds.all_edges();
        let n = ds.num_users();
        let (mut n_l, mut n_l_s, mut n_lt, mut n_lt_s) = (0, 0, 0, 0);
        for a in 0..n {
            for b in a + 1..n {
                let ta = &ds.trajectories[a];
                let tb = &ds.trajectories[b];
                let mut share = false;
                let mut share_t = false;
                for ca in &ta.events {
                    for cb in &tb.events {
                        if ca.location == cb.location {
                            share = true;
                            if ca.timestamp.div_euclid(window_secs)
                                == cb.timestamp.div_euclid(window_secs)
                            {
                                share_t = true;
                            }
                        }
                    }
                }
                let is_linked = linked.contains(&Edge::new(a as u32, b as u32));
                if share {
                    n_l += 1;
                    if is_linked {
                        n_l_s += 1;
                    }
                }
                if share_t {
                    n_lt += 1;
                    if is_linked {
                        n_lt_s += 1;
                    }
                }
            }
        }
        (n_l, n_l_s, n_lt, n_lt_s)
    }

    #[test]
    fn cooccurrence_matches_quadratic_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let n = rng.gen_range(5..40);
            let trajs: Vec<Vec<CheckIn>> = (0..n)
                .map(|_| {
                    let mut t = 0i64;
                    (0..rng.gen_range(1..12))
                        .map(|_| {
                            t += rng.gen_range(0..30_000);
                            CheckIn::new(rng.gen_range(0..6), t)
                        })
                        .collect()
                })
                .collect();
            let mut edges = Vec::new();
            for a in 0..n as u32 {
                for b in a + 1..n as u32 {
                    if rng.gen_bool(0.25) {
                        edges.push((a, b));
                    }
                }
            }
            let ds = dataset_from(trajs, &edges, 6);
            let rep = cooccurrence_ratios(&ds, 1.0, WindowMode::Bucket).unwrap();
            let want = brute_force_counts(&ds, 3600);
            assert_eq!(
                (rep.n_l, rep.n_l_s, rep.n_lt, rep.n_lt_s),
                want,
                "trial {trial}"
            );
            // structural bounds
            assert!(rep.n_l_s <= rep.n_l && rep.n_lt_s <= rep.n_lt && rep.n_lt <= rep.n_l);
        }
    }

    #[test]
    fn sampled_unlinked_pairs_are_unlinked() {
        let trajs: Vec<Vec<CheckIn>> = (0..20).map(|u| vec![CheckIn::new(0, u * 100)]).collect();
        let edges: Vec<(u32, u32)> = (0..10).map(|i| (i, i + 10)).collect();
        let ds = dataset_from(trajs, &edges, 1);
        let pairs = sample_unlinked_pairs(&ds, 10, 3);
        let linked = ds.all_edges();
        assert!(!pairs.is_empty());
        for (a, b) in pairs {
            assert!(!linked.contains(&Edge::new(a, b)));
        }
    }
}
