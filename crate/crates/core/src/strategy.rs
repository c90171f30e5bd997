//! Beacon-rate adaptation strategies.
//!
//! Swarm FREDY runs three stages every window: SQMC derives the node's own
//! desired beacon rate from observed channel occupancy and votes for it,
//! SIEC turns every received beacon into a potential vote filtered by the
//! sDiDi distance gate, and BRAC picks the most-requested rate from the
//! node's request buffer. Swarm DIFRA is the non-voting baseline that jumps
//! straight to the fair-share rate. Fixed holds a constant rate.

use rand::Rng;

use crate::domain::{BRBuffer, BeaconRateSet, ChannelParams, NodeId, Position, SdidiParams, Vehicle};
use crate::radio::WindowQueue;

/// Which adaptation strategy a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    Fredy(SdidiParams),
    Difra,
    Fixed(u32),
}

impl StrategyKind {
    /// Short label used in result tables, e.g. `SF(050,100)`, `SD`, `FIXED(7)`.
    pub fn label(&self) -> String {
        fn dist(d: f64) -> String {
            if d.fract() == 0.0 && (0.0..1000.0).contains(&d) {
                format!("{:03}", d as u32)
            } else {
                format!("{d}")
            }
        }
        match self {
            StrategyKind::Fredy(p) => format!("SF({},{})", dist(p.d1), dist(p.d2)),
            StrategyKind::Difra => "SD".to_string(),
            StrategyKind::Fixed(r) => format!("FIXED({r})"),
        }
    }
}

/// sDiDi role of a sender at a given distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdidiClass {
    /// Closer than `d1`: always heeded.
    Authority,
    /// Between `d1` and `d2`: heeded with distance-decaying probability.
    Voter,
    /// Farther than `d2`: always ignored.
    Exile,
}

pub fn sdidi_classify(distance: f64, p: &SdidiParams) -> SdidiClass {
    if distance < p.d1 {
        SdidiClass::Authority
    } else if distance > p.d2 {
        SdidiClass::Exile
    } else {
        SdidiClass::Voter
    }
}

/// Probability that a vote from `distance` is accepted: 1 inside `d1`,
/// 0 beyond `d2`, linear in between.
pub fn sdidi_acceptance_probability(distance: f64, p: &SdidiParams) -> f64 {
    match sdidi_classify(distance, p) {
        SdidiClass::Authority => 1.0,
        SdidiClass::Exile => 0.0,
        SdidiClass::Voter => (p.d2 - distance) / (p.d2 - p.d1),
    }
}

/// One Bernoulli acceptance trial. Authorities and Exiles are decided
/// without touching the generator.
pub fn sdidi_accept<R: Rng>(distance: f64, p: &SdidiParams, rng: &mut R) -> bool {
    match sdidi_classify(distance, p) {
        SdidiClass::Authority => true,
        SdidiClass::Exile => false,
        SdidiClass::Voter => rng.random::<f64>() < sdidi_acceptance_probability(distance, p),
    }
}

/// One received beacon reduced to what the strategy needs: who sent it, how
/// far away they were, and what rate they asked for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborObservation {
    pub sender_id: NodeId,
    pub distance: f64,
    pub dbr: u32,
}

/// What one node can see of its neighborhood in a window: the distinct
/// sender count and one observation per received beacon copy.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodView {
    pub nn_size: usize,
    pub observations: Vec<NeighborObservation>,
}

pub fn estimate_neighborhood(
    queue: &WindowQueue,
    own_position: Position,
    road_length: f64,
) -> NeighborhoodView {
    let observations = queue
        .entries
        .iter()
        .map(|b| NeighborObservation {
            sender_id: b.sender_id,
            distance: own_position.ring_distance(&b.position, road_length),
            dbr: b.dbr,
        })
        .collect();
    NeighborhoodView {
        nn_size: queue.distinct_senders(),
        observations,
    }
}

/// Theoretical desired beacon rate: the fair share of the channel budget
/// among the node and its `nn_size` known neighbors.
pub fn compute_tdbr(omega: f64, nn_size: usize) -> u64 {
    debug_assert!(omega >= 0.0);
    (omega / (nn_size as f64 + 1.0)).floor() as u64
}

/// Maps an unconstrained target rate into the discrete rate set: below the
/// set floors to `br_min`, above caps at `br_max`, interior non-members
/// round down to the nearest member.
pub fn clamp_rate(tdbr: u64, rates: &BeaconRateSet) -> u32 {
    if tdbr <= u64::from(rates.br_min()) {
        rates.br_min()
    } else if tdbr >= u64::from(rates.br_max()) {
        rates.br_max()
    } else {
        rates
            .floor_member(tdbr)
            .expect("tdbr >= br_min, so a floor member exists")
    }
}

/// SQMC: derives the node's own desired rate from this window's queue and
/// casts exactly one vote for it in the request buffer.
pub fn sqmc_process(
    buffer: &mut BRBuffer,
    queue: &WindowQueue,
    channel: &ChannelParams,
    rates: &BeaconRateSet,
) -> u32 {
    let nn = queue.distinct_senders();
    let own_dbr = clamp_rate(compute_tdbr(channel.omega(), nn), rates);
    buffer.record(own_dbr, rates);
    own_dbr
}

/// SIEC: one received beacon becomes one vote for its stamped rate, if the
/// sDiDi gate accepts the sender's distance.
pub fn siec_process<R: Rng>(
    buffer: &mut BRBuffer,
    observation: &NeighborObservation,
    params: &SdidiParams,
    rates: &BeaconRateSet,
    rng: &mut R,
) {
    if sdidi_accept(observation.distance, params, rng) {
        buffer.record(observation.dbr, rates);
    }
}

/// BRAC: picks the most-requested rate from the buffer, breaking ties
/// toward the larger rate; an empty buffer keeps the current rate. The
/// buffer is cleared before returning.
pub fn brac_decide(buffer: &mut BRBuffer, current_br: u32, rates: &BeaconRateSet) -> u32 {
    let decision = if buffer.is_all_zero() {
        current_br
    } else {
        let counts = buffer.counts();
        let mut best = 0usize;
        for (i, &c) in counts.iter().enumerate() {
            if c >= counts[best] {
                best = i;
            }
        }
        rates.rates()[best]
    };
    buffer.clear();
    decision
}

/// Swarm DIFRA: every window, jump directly to the clamped fair share over
/// all distinct senders heard. No buffer, no voting.
pub fn difra_decide(queue: &WindowQueue, channel: &ChannelParams, rates: &BeaconRateSet) -> u32 {
    let nn = queue.distinct_senders();
    clamp_rate(compute_tdbr(channel.omega(), nn), rates)
}

/// Outcome of one window of strategy processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    /// Beacon rate to apply from the next window on.
    pub next_br: u32,
    /// Desired rate to stamp into the next window's outgoing beacons.
    pub stamp_dbr: u32,
}

/// Immutable per-scenario context the strategies need each window.
#[derive(Debug, Clone, Copy)]
pub struct StrategyEnv<'a> {
    pub channel: &'a ChannelParams,
    pub rates: &'a BeaconRateSet,
    pub road_length: f64,
    /// When set, SIEC accepts at most one vote per distinct sender per
    /// window instead of one per received beacon copy.
    pub dedup_senders: bool,
}

/// Runs one full window of the given strategy for one node. FREDY mutates
/// the vehicle's request buffer; the other strategies leave it untouched.
pub fn decide_window<R: Rng>(
    kind: &StrategyKind,
    own: &mut Vehicle,
    queue: &WindowQueue,
    env: &StrategyEnv,
    rng: &mut R,
) -> Decision {
    match kind {
        StrategyKind::Fredy(params) => {
            let own_dbr = sqmc_process(&mut own.br_buffer, queue, env.channel, env.rates);
            let view = estimate_neighborhood(queue, own.position, env.road_length);
            let mut seen: Vec<NodeId> = Vec::new();
            for obs in &view.observations {
                if env.dedup_senders {
                    if seen.contains(&obs.sender_id) {
                        continue;
                    }
                    seen.push(obs.sender_id);
                }
                siec_process(&mut own.br_buffer, obs, params, env.rates, rng);
            }
            let next_br = brac_decide(&mut own.br_buffer, own.current_br, env.rates);
            Decision {
                next_br,
                stamp_dbr: own_dbr,
            }
        }
        StrategyKind::Difra => {
            let next_br = difra_decide(queue, env.channel, env.rates);
            Decision {
                next_br,
                stamp_dbr: next_br,
            }
        }
        StrategyKind::Fixed(rate) => Decision {
            next_br: *rate,
            stamp_dbr: *rate,
        },
    }
}
