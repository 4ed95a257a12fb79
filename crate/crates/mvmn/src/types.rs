//! Core domain types: check-ins, trajectories and time binning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type used by all numerical code. Defaults to `f64`; build with
/// `--features f32` to train in single precision (tests assume `f64`).
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Index into the user vocabulary.
pub type UserId = u32;
/// Index into the location vocabulary.
pub type LocationId = u32;

/// Seconds per hour, used for every timestamp conversion.
pub const SECONDS_PER_HOUR: i64 = 3600;
/// Number of hour-of-day bins.
pub const HOURS_PER_DAY: usize = 24;

/// One check-in event: a location and when it happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckIn {
    pub location: LocationId,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
}

impl CheckIn {
    pub fn new(location: LocationId, timestamp: i64) -> Self {
        CheckIn {
            location,
            timestamp,
        }
    }

    /// Event time in real-valued hours since the epoch.
    pub fn hours(&self) -> Real {
        self.timestamp as Real / SECONDS_PER_HOUR as Real
    }
}

/// A user's time-ordered check-in sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: UserId,
    pub events: Vec<CheckIn>,
}

impl Trajectory {
    /// Builds a trajectory, sorting events by timestamp (stable, so ties keep
    /// file order).
    pub fn new(user: UserId, mut events: Vec<CheckIn>) -> Self {
        events.sort_by_key(|c| c.timestamp);
        Trajectory { user, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn location_ids(&self) -> Vec<LocationId> {
        self.events.iter().map(|c| c.location).collect()
    }

    /// Hour-of-day bin per event, for time-embedding lookup.
    pub fn time_bins(&self) -> Vec<usize> {
        self.events
            .iter()
            .map(|c| hour_of_day_bin(c.timestamp))
            .collect()
    }

    /// Event times in hours, for inter-event gaps.
    pub fn hours(&self) -> Vec<Real> {
        self.events.iter().map(|c| c.hours()).collect()
    }
}

/// A candidate user pair with its ground-truth link label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub u_m: UserId,
    pub u_n: UserId,
    pub label: bool,
}

impl LabeledPair {
    pub fn new(u_m: UserId, u_n: UserId, label: bool) -> Self {
        debug_assert_ne!(u_m, u_n);
        LabeledPair { u_m, u_n, label }
    }
}

/// The three view-specific matching representations for one user pair.
/// Disabled views are empty. Every present entry lies in [-1, 1].
#[derive(Debug, Clone)]
pub struct MatchViews {
    /// Geographic matching vector, `2 * k_max` entries.
    pub v_loc: Vec<Real>,
    /// Time-series matching vector, `hidden_dim` entries.
    pub v_time: Vec<Real>,
    /// Social matching vector, `embed_dim` entries.
    pub v_rel: Vec<Real>,
}

/// Maps an epoch timestamp to its hour-of-day bin in `[0, 24)`.
pub fn hour_of_day_bin(timestamp: i64) -> usize {
    debug_assert!(timestamp >= 0);
    (timestamp.div_euclid(SECONDS_PER_HOUR) % 24) as usize
}

/// Boundaries (in hours) of the gap-interval histogram. The last interval is
/// open-ended. Note the source analysis announces seven intervals but lists
/// these six; we bin into the six listed.
pub const GAP_INTERVAL_BOUNDS: [Real; 5] = [1.0, 2.0, 6.0, 12.0, 24.0];
/// Number of gap-interval bins.
pub const GAP_INTERVALS: usize = 6;

/// Maps a non-negative inter-event gap (hours) to its interval bin among
/// `[0,1), [1,2), [2,6), [6,12), [12,24), [24,inf)`.
pub fn gap_interval_bin(delta_hours: Real) -> Result<usize> {
    if delta_hours < 0.0 {
        return Err(Error::Invalid(format!(
            "negative gap interval: {delta_hours}"
        )));
    }
    Ok(GAP_INTERVAL_BOUNDS
        .iter()
        .position(|&b| delta_hours < b)
        .unwrap_or(GAP_INTERVALS - 1))
}
