//! Radio propagation and per-window beacon exchange.
//!
//! Path loss follows a three-slope log-distance model: free-space reference
//! loss at `d0`, then exponents `n0`, `n_a`, `n_b` over the near, middle and
//! far segments split at `d_a` and `d_b`. Reception is a hard threshold on
//! received power; optional log-normal shadowing softens the cutoff.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{Beacon, Vehicle, BEACON_SIZE_BYTES};

/// Carrier frequency used for the free-space reference loss at `d0`.
pub const CARRIER_FREQ_HZ: f64 = 5.8e9;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Propagation and receiver parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    /// Intended one-hop communication range in meters; `rx_sensitivity_dbm`
    /// is calibrated so the zero-shadowing cutoff lands exactly here.
    pub comm_range: f64,
    /// Reference distance for the free-space term, meters.
    pub d0: f64,
    /// First breakpoint distance, meters.
    pub d_a: f64,
    /// Second breakpoint distance, meters.
    pub d_b: f64,
    /// Path-loss exponent for `d0 < d < d_a`.
    pub n0: f64,
    /// Path-loss exponent for `d_a <= d < d_b`.
    pub n_a: f64,
    /// Path-loss exponent for `d >= d_b`.
    pub n_b: f64,
    pub tx_power_dbm: f64,
    pub rx_sensitivity_dbm: f64,
    /// Standard deviation of log-normal shadowing in dB; 0 disables it.
    pub shadowing_sigma_db: f64,
}

impl RadioParams {
    /// Default propagation constants with the receiver sensitivity solved so
    /// that, without shadowing, reception succeeds iff distance is within
    /// `comm_range`.
    pub fn calibrated(comm_range: f64) -> Self {
        let mut p = Self {
            comm_range,
            d0: 1.0,
            d_a: 90.0,
            d_b: 500.0,
            n0: 1.9,
            n_a: 3.8,
            n_b: 3.8,
            tx_power_dbm: 20.0,
            rx_sensitivity_dbm: 0.0,
            shadowing_sigma_db: 0.0,
        };
        p.rx_sensitivity_dbm = p.tx_power_dbm - path_loss_db(comm_range, &p);
        p
    }

    /// Free-space loss at the reference distance `d0` for the carrier.
    pub fn reference_loss_db(&self) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * self.d0 * CARRIER_FREQ_HZ / SPEED_OF_LIGHT).log10()
    }
}

impl Default for RadioParams {
    fn default() -> Self {
        Self::calibrated(250.0)
    }
}

/// Path loss in dB at `distance` meters. Distances at or below `d0` clamp to
/// the reference loss; the three segments join continuously.
pub fn path_loss_db(distance: f64, p: &RadioParams) -> f64 {
    debug_assert!(distance > 0.0, "path loss needs a positive distance");
    let l0 = p.reference_loss_db();
    if distance <= p.d0 {
        return l0;
    }
    let near = |d: f64| l0 + 10.0 * p.n0 * (d / p.d0).log10();
    if distance < p.d_a {
        return near(distance);
    }
    let mid = |d: f64| near(p.d_a) + 10.0 * p.n_a * (d / p.d_a).log10();
    if distance < p.d_b {
        return mid(distance);
    }
    mid(p.d_b) + 10.0 * p.n_b * (distance / p.d_b).log10()
}

/// Single reception trial at `distance`. With `shadowing_sigma_db == 0` the
/// outcome is deterministic and the generator is not touched.
pub fn try_receive<R: Rng>(distance: f64, p: &RadioParams, rng: &mut R) -> bool {
    let mut rx_power = p.tx_power_dbm - path_loss_db(distance, p);
    if p.shadowing_sigma_db > 0.0 {
        let shadow = Normal::new(0.0, p.shadowing_sigma_db)
            .expect("sigma is finite and positive")
            .sample(rng);
        rx_power -= shadow;
    }
    rx_power >= p.rx_sensitivity_dbm
}

/// Everything one node hears (and would itself enqueue) in one window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowQueue {
    /// Received beacon copies, in sender-major emission order.
    pub entries: Vec<Beacon>,
    /// The node's own beacons for the window; they occupy channel budget
    /// even though the node does not receive itself.
    pub own_pending: u32,
}

impl WindowQueue {
    /// Total channel occupancy attributable to this node's viewpoint.
    pub fn occupancy_count(&self) -> u64 {
        self.entries.len() as u64 + u64::from(self.own_pending)
    }

    /// Number of distinct senders heard this window.
    pub fn distinct_senders(&self) -> usize {
        let mut ids: Vec<_> = self.entries.iter().map(|b| b.sender_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn reset(&mut self) {
        self.entries.clear();
        self.own_pending = 0;
    }
}

/// Simulates one beaconing window: every vehicle emits `current_br` beacons
/// stamped with `stamps[sender]`, and every other vehicle within radio reach
/// receives them. Returns one queue per vehicle, indexed like `vehicles`.
///
/// Without shadowing each (receiver, sender) pair is decided once; with
/// shadowing every beacon copy fades independently, drawn in receiver-major,
/// then sender, then emission order so runs are reproducible.
pub fn broadcast_window<R: Rng>(
    vehicles: &[Vehicle],
    stamps: &[u32],
    road_length: f64,
    window_start: f64,
    window_len: f64,
    params: &RadioParams,
    rng: &mut R,
) -> Vec<WindowQueue> {
    debug_assert_eq!(vehicles.len(), stamps.len());
    let mut queues: Vec<WindowQueue> = vehicles
        .iter()
        .map(|v| WindowQueue {
            entries: Vec::new(),
            own_pending: v.current_br,
        })
        .collect();

    for (ri, receiver) in vehicles.iter().enumerate() {
        for (si, sender) in vehicles.iter().enumerate() {
            if si == ri {
                continue;
            }
            let distance = receiver
                .position
                .ring_distance(&sender.position, road_length);
            let rate = sender.current_br;
            let pair_ok = if params.shadowing_sigma_db > 0.0 {
                true
            } else {
                try_receive(distance, params, rng)
            };
            if !pair_ok {
                continue;
            }
            for b in 0..rate {
                if params.shadowing_sigma_db > 0.0 && !try_receive(distance, params, rng) {
                    continue;
                }
                let timestamp = window_start + (f64::from(b) + 0.5) * window_len / f64::from(rate);
                queues[ri].entries.push(Beacon {
                    sender_id: sender.id,
                    position: sender.position,
                    speed: sender.speed,
                    heading: sender.direction,
                    dbr: stamps[si],
                    timestamp,
                    size_bytes: BEACON_SIZE_BYTES,
                });
            }
        }
    }
    queues
}
