//! Core domain types shared by every other module: the discrete beacon-rate
//! set, channel capacity parameters, sDiDi distance thresholds, vehicles,
//! beacons, and the per-node rate-request buffer.

use thiserror::Error;

/// Dense vehicle identifier, assigned 0..N at scenario construction.
pub type NodeId = u32;

/// Every beacon carries the same payload size; airtime is not modeled, the
/// channel budget is expressed in beacons per window.
pub const BEACON_SIZE_BYTES: u32 = 100;

/// A single configuration violation. Validation collects all of them instead
/// of stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct InvalidConfig {
    pub field: String,
    pub reason: String,
}

impl InvalidConfig {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// The discrete set of allowed beacon rates, in beacons per window.
///
/// Rates are kept sorted strictly ascending; `br_min`/`br_max` are the ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconRateSet {
    rates: Vec<u32>,
}

impl BeaconRateSet {
    /// Builds a rate set from an ascending list of positive rates.
    pub fn new(rates: Vec<u32>) -> Result<Self, InvalidConfig> {
        if rates.is_empty() {
            return Err(InvalidConfig::new("rate_set", "must not be empty"));
        }
        if rates[0] == 0 {
            return Err(InvalidConfig::new("rate_set", "rates must be >= 1"));
        }
        if rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(InvalidConfig::new(
                "rate_set",
                "rates must be strictly increasing",
            ));
        }
        Ok(Self { rates })
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn br_min(&self) -> u32 {
        self.rates[0]
    }

    pub fn br_max(&self) -> u32 {
        *self.rates.last().unwrap()
    }

    pub fn contains(&self, rate: u32) -> bool {
        self.rates.binary_search(&rate).is_ok()
    }

    pub fn index_of(&self, rate: u32) -> Option<usize> {
        self.rates.binary_search(&rate).ok()
    }

    /// Largest member `<= value`, or `None` if `value < br_min`.
    pub fn floor_member(&self, value: u64) -> Option<u32> {
        self.rates
            .iter()
            .rev()
            .find(|&&r| u64::from(r) <= value)
            .copied()
    }
}

impl Default for BeaconRateSet {
    /// 1..=10 beacons per window, the usual safety-beaconing range.
    fn default() -> Self {
        Self {
            rates: (1..=10).collect(),
        }
    }
}

/// Channel capacity model: `max_q` beacons fit in one window, of which the
/// fraction `alpha` is the usable budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub max_q: u32,
    pub alpha: f64,
}

impl ChannelParams {
    /// Usable channel budget in beacons per window. Always derived, never
    /// stored, so `max_q`/`alpha` edits cannot leave it stale.
    pub fn omega(&self) -> f64 {
        self.alpha * f64::from(self.max_q)
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            max_q: 400,
            alpha: 0.8,
        }
    }
}

/// sDiDi thresholds: inside `d1` a sender is an Authority, beyond `d2` an
/// Exile, in between a Voter with linearly decaying acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdidiParams {
    pub d1: f64,
    pub d2: f64,
}

/// Planar position in meters. `x` runs along the road, `y` across lanes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    /// Euclidean distance on a ring road of circumference `road_length`:
    /// the longitudinal component wraps around, the lateral one does not.
    pub fn ring_distance(&self, other: &Position, road_length: f64) -> f64 {
        let raw = (self.x - other.x).abs();
        let dx = raw.min(road_length - raw);
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// One received beacon copy as it sits in a receiver's window queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub sender_id: NodeId,
    pub position: Position,
    pub speed: f64,
    /// Travel direction along the road, +1 or -1.
    pub heading: i8,
    /// Desired beacon rate the sender stamped into this beacon.
    pub dbr: u32,
    /// Emission time in seconds from the start of the replication.
    pub timestamp: f64,
    pub size_bytes: u32,
}

/// Per-node buffer of beacon-rate requests, one counter per member of the
/// rate set. Index `i` counts requests for `rates[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BRBuffer {
    counts: Vec<u32>,
}

impl BRBuffer {
    pub fn new(rate_count: usize) -> Self {
        Self {
            counts: vec![0; rate_count],
        }
    }

    /// Builds a buffer from explicit counters; lengths must match the rate
    /// set it will be used with.
    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Registers one request for `rate`, which must be a member of `rates`.
    pub fn record(&mut self, rate: u32, rates: &BeaconRateSet) {
        let idx = rates
            .index_of(rate)
            .expect("recorded rate must belong to the rate set");
        self.counts[idx] += 1;
    }

    pub fn is_all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn clear(&mut self) {
        self.counts.fill(0);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// A vehicle: road kinematics plus the beaconing state the protocol mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: NodeId,
    pub position: Position,
    /// Lane index, 0-based across both directions.
    pub lane: u32,
    /// Speed in m/s, always >= 0.
    pub speed: f64,
    /// +1 travels toward increasing x, -1 toward decreasing x.
    pub direction: i8,
    /// Beacon rate currently in force, a member of the rate set.
    pub current_br: u32,
    pub br_buffer: BRBuffer,
    /// Number of windows whose rate differed from the previous window's.
    pub adaptation_count: u32,
}

impl Vehicle {
    pub fn new(id: NodeId, position: Position, lane: u32, speed: f64, direction: i8) -> Self {
        Self {
            id,
            position,
            lane,
            speed,
            direction,
            current_br: 0,
            br_buffer: BRBuffer::new(0),
            adaptation_count: 0,
        }
    }

    /// Prepares the beaconing state for the start of a replication.
    pub fn init_protocol(&mut self, initial_rate: u32, rates: &BeaconRateSet) {
        debug_assert!(rates.contains(initial_rate));
        self.current_br = initial_rate;
        self.br_buffer = BRBuffer::new(rates.len());
        self.adaptation_count = 0;
    }
}
