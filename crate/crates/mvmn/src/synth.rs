//! Synthetic location-aware social networks with planted community
//! structure: in-community friendships, shared location pools, per-community
//! peak hours and inter-event gap scales. Every matching view of the model
//! has real signal to find, which makes the generator the substrate for
//! end-to-end tests.

use chrono::{TimeZone, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub communities: usize,
    pub users_per_community: usize,
    /// Size of each community's own location pool.
    pub locations_per_community: usize,
    /// Size of the shared global pool.
    pub global_locations: usize,
    /// Friendship probability within a community.
    pub p_in: f64,
    /// Friendship probability across communities.
    pub p_out: f64,
    /// Probability a check-in uses the community pool instead of the global
    /// pool.
    pub own_pool_prob: f64,
    /// Probability an event's wall-clock hour is pulled to the community
    /// peak.
    pub peak_concentration: f64,
    /// Spread (hours) around the community peak.
    pub peak_width_hours: f64,
    /// Mean inter-event gap range in hours; community c interpolates
    /// linearly between the two endpoints.
    pub mean_gap_hours: (f64, f64),
    /// Inclusive range of check-ins per user.
    pub checkins_per_user: (usize, usize),
    /// Epoch seconds of the observation window start.
    pub start_epoch: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            communities: 8,
            users_per_community: 40,
            locations_per_community: 25,
            global_locations: 150,
            p_in: 0.15,
            p_out: 0.005,
            own_pool_prob: 0.75,
            peak_concentration: 0.8,
            peak_width_hours: 1.5,
            mean_gap_hours: (4.0, 16.0),
            checkins_per_user: (15, 40),
            start_epoch: 1_262_304_000, // 2010-01-01T00:00:00Z
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.communities == 0 || self.users_per_community == 0 {
            return Err(Error::Config("need at least one community and user".into()));
        }
        if self.p_in <= self.p_out {
            return Err(Error::Config(
                "planted structure needs p_in > p_out".into(),
            ));
        }
        let uniform_own_share = self.locations_per_community as f64
            / (self.locations_per_community * self.communities + self.global_locations) as f64;
        if self.own_pool_prob <= uniform_own_share {
            return Err(Error::Config(format!(
                "own_pool_prob {} must exceed the uniform own-pool share {uniform_own_share:.4}",
                self.own_pool_prob
            )));
        }
        if self.checkins_per_user.0 == 0 || self.checkins_per_user.0 > self.checkins_per_user.1 {
            return Err(Error::Config("bad check-ins per user range".into()));
        }
        if !(0.0..=1.0).contains(&self.peak_concentration) {
            return Err(Error::Config("peak concentration must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.communities * self.users_per_community
    }

    /// Peak hour of community `c`, evenly spaced around the clock.
    pub fn peak_hour(&self, c: usize) -> f64 {
        24.0 * c as f64 / self.communities as f64
    }

    /// Mean inter-event gap of community `c`.
    pub fn mean_gap(&self, c: usize) -> f64 {
        let (lo, hi) = self.mean_gap_hours;
        if self.communities == 1 {
            return lo;
        }
        lo + (hi - lo) * c as f64 / (self.communities - 1) as f64
    }
}

/// Generated raw files, line by line, plus bookkeeping for tests.
pub struct SynthOutput {
    pub checkin_lines: Vec<String>,
    pub edge_lines: Vec<String>,
    pub num_users: usize,
    pub num_edges: usize,
    /// Community index per user.
    pub community: Vec<usize>,
}

fn location_name(community: Option<usize>, idx: usize) -> String {
    match community {
        Some(c) => format!("c{c:02}_{idx:03}"),
        None => format!("g_{idx:03}"),
    }
}

/// Deterministic pseudo-coordinates inside the unit square for a location
/// name; purely cosmetic but stable across runs.
fn location_coords(name: &str) -> (f64, f64) {
    let mut h: u64 = 1_469_598_103_934_665_603; // FNV-1a
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1_099_511_628_211);
    }
    let lat = (h >> 32) as f64 / u32::MAX as f64;
    let lon = (h & 0xffff_ffff) as f64 / u32::MAX as f64;
    (lat.clamp(0.0, 1.0), lon.clamp(0.0, 1.0))
}

/// Generates the raw check-in and edge files in the five-field TSV layout.
/// Byte-identical across runs with equal configs.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_users();
    let community: Vec<usize> = (0..n).map(|u| u / config.users_per_community).collect();
    let user_name = |u: usize| format!("{u:05}");

    // friendships
    let mut edge_lines = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if community[a] == community[b] {
                config.p_in
            } else {
                config.p_out
            };
            if rng.gen_bool(p) {
                edge_lines.push(format!("{}\t{}", user_name(a), user_name(b)));
            }
        }
    }

    // trajectories
    let mut checkin_lines = Vec::new();
    for u in 0..n {
        let c = community[u];
        let gap_dist = Exp::new(1.0 / config.mean_gap(c)).expect("positive rate");
        let peak = Normal::new(config.peak_hour(c), config.peak_width_hours)
            .expect("positive width");
        let count =
            rng.gen_range(config.checkins_per_user.0..=config.checkins_per_user.1);
        let mut t = config.start_epoch as f64 / 3600.0 + rng.gen_range(0.0..24.0 * 7.0);
        let mut events: Vec<(i64, String)> = Vec::with_capacity(count);
        for _ in 0..count {
            t += gap_dist.sample(&mut rng);
            let mut hours = t;
            if rng.gen_bool(config.peak_concentration) {
                let day_start = (t / 24.0).floor() * 24.0;
                let hour = peak.sample(&mut rng).rem_euclid(24.0);
                hours = day_start + hour;
            }
            let loc = if rng.gen_bool(config.own_pool_prob) {
                location_name(Some(c), rng.gen_range(0..config.locations_per_community))
            } else {
                location_name(None, rng.gen_range(0..config.global_locations))
            };
            events.push(((hours * 3600.0) as i64, loc));
        }
        events.sort();
        for (ts, loc) in events {
            let (lat, lon) = location_coords(&loc);
            let when = Utc
                .timestamp_opt(ts, 0)
                .single()
                .ok_or_else(|| Error::Invalid(format!("timestamp {ts} out of range")))?
                .format("%Y-%m-%dT%H:%M:%SZ");
            checkin_lines.push(format!(
                "{}\t{}\t{:.5}\t{:.5}\t{}",
                user_name(u),
                when,
                lat,
                lon,
                loc
            ));
        }
    }

    Ok(SynthOutput {
        num_edges: edge_lines.len(),
        checkin_lines,
        edge_lines,
        num_users: n,
        community,
    })
}

/// Generates and writes both files.
pub fn generate_to_files(
    config: &SynthConfig,
    checkins: &std::path::Path,
    edges: &std::path::Path,
) -> Result<SynthOutput> {
    let out = generate(config)?;
    std::fs::write(checkins, out.checkin_lines.join("\n") + "\n")
        .map_err(|e| Error::io(checkins.display().to_string(), e))?;
    std::fs::write(edges, out.edge_lines.join("\n") + "\n")
        .map_err(|e| Error::io(edges.display().to_string(), e))?;
    Ok(out)
}
