//! Packet-level simulator and strategy library for beacon-rate congestion
//! control in vehicular ad-hoc networks.
//!
//! The crate is organized around a discrete-time window loop: vehicles move
//! on a multi-lane ring road ([`mobility`]), broadcast beacons over a
//! three-slope log-distance channel ([`radio`]), observe their one-hop
//! neighborhood through the per-window reception queue, and adapt their own
//! beacon rate with a pluggable strategy ([`strategy`]). Per-window channel
//! metrics ([`metrics`]), replication orchestration ([`engine`]) and the
//! nonparametric comparison tests ([`stats`]) sit on top.

pub mod config;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod stats;
pub mod strategy;
