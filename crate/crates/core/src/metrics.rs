//! Per-window channel metrics and their per-replication aggregation.
//!
//! Occupancy (eta) is the share of the window's channel capacity consumed
//! from one node's viewpoint. Balance (sigma) measures how unevenly beacon
//! rates are spread across the node and its neighbors; lower is better.

use std::io::{self, Write};

use thiserror::Error;

use crate::domain::{ChannelParams, NodeId};
use crate::radio::WindowQueue;

/// Balance is undefined for a node that heard no neighbors this window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("balance is undefined without neighbors")]
pub struct UndefinedBalance;

/// How the rate-dispersion statistic is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMode {
    /// Sum of squared deviations over neighbor count, divided by the mean.
    /// This is the default reported by the simulator.
    VarianceOverMean,
    /// Textbook coefficient of variation: population standard deviation
    /// over the mean.
    CoefficientOfVariation,
}

/// Channel occupancy in percent from one node's viewpoint: everything it
/// heard plus its own pending beacons, against the window capacity.
pub fn channel_occupancy(queue: &WindowQueue, channel: &ChannelParams) -> f64 {
    queue.occupancy_count() as f64 / f64::from(channel.max_q) * 100.0
}

/// Rate-dispersion statistic over a node's own rate and its neighbors'
/// rates. The mean runs over all `n + 1` rates; in `VarianceOverMean` the
/// squared deviations are averaged over the `n` neighbors only.
pub fn network_balance(
    own_br: u32,
    neighbor_brs: &[u32],
    mode: BalanceMode,
) -> Result<f64, UndefinedBalance> {
    let n = neighbor_brs.len();
    if n == 0 {
        return Err(UndefinedBalance);
    }
    let total: f64 = neighbor_brs.iter().map(|&r| f64::from(r)).sum::<f64>() + f64::from(own_br);
    let mean = total / (n as f64 + 1.0);
    debug_assert!(mean > 0.0, "rates are positive, so the mean must be");
    let devsum: f64 = neighbor_brs
        .iter()
        .map(|&r| (f64::from(r) - mean).powi(2))
        .sum::<f64>()
        + (f64::from(own_br) - mean).powi(2);
    Ok(match mode {
        BalanceMode::VarianceOverMean => devsum / n as f64 / mean,
        BalanceMode::CoefficientOfVariation => (devsum / (n as f64 + 1.0)).sqrt() / mean,
    })
}

/// One node's metrics for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub node_id: NodeId,
    pub window: u32,
    /// Channel occupancy in percent.
    pub eta: f64,
    /// Rate balance; absent when the node heard no neighbors.
    pub sigma: Option<f64>,
    /// Beacon rate in force during this window.
    pub br: u32,
    /// Whether this window's rate differs from the previous window's.
    pub adapted: bool,
    /// Whether occupancy exceeded the window capacity `max_q`.
    pub overflow: bool,
}

/// Distribution snapshot of one metric over a replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Per-replication aggregate over all recorded node-windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub br: MetricSummary,
    pub eta: MetricSummary,
    /// Absent when no node-window had a defined balance.
    pub sigma: Option<MetricSummary>,
    /// Total rate changes across nodes and windows.
    pub adaptations: u64,
    pub overflow_events: u64,
    pub record_count: usize,
}

/// Linear-interpolation quantile over an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median of an unsorted sample (the input is left untouched).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    quantile_sorted(&sorted, 0.5)
}

fn summarize(values: &mut [f64]) -> MetricSummary {
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    MetricSummary {
        mean,
        q1: quantile_sorted(values, 0.25),
        median: quantile_sorted(values, 0.5),
        q3: quantile_sorted(values, 0.75),
    }
}

/// Aggregates one replication's records. Needs at least one record.
pub fn aggregate_replication(records: &[MetricsRecord]) -> ReplicationSummary {
    assert!(!records.is_empty(), "a replication must record something");
    let mut brs: Vec<f64> = records.iter().map(|r| f64::from(r.br)).collect();
    let mut etas: Vec<f64> = records.iter().map(|r| r.eta).collect();
    let mut sigmas: Vec<f64> = records.iter().filter_map(|r| r.sigma).collect();
    ReplicationSummary {
        br: summarize(&mut brs),
        eta: summarize(&mut etas),
        sigma: if sigmas.is_empty() {
            None
        } else {
            Some(summarize(&mut sigmas))
        },
        adaptations: records.iter().filter(|r| r.adapted).count() as u64,
        overflow_events: records.iter().filter(|r| r.overflow).count() as u64,
        record_count: records.len(),
    }
}

/// Header of the per-node-window records CSV.
pub const RECORDS_CSV_HEADER: &str = "replication,node,window,eta,sigma,br,adapted,overflow";

/// Formats one records-CSV line (no trailing newline). Booleans print as
/// 0/1; an undefined sigma prints as an empty field.
pub fn record_csv_line(replication: u32, r: &MetricsRecord) -> String {
    let sigma = match r.sigma {
        Some(s) => format!("{s:.4}"),
        None => String::new(),
    };
    format!(
        "{},{},{},{:.4},{},{},{},{}",
        replication,
        r.node_id,
        r.window,
        r.eta,
        sigma,
        r.br,
        u8::from(r.adapted),
        u8::from(r.overflow),
    )
}

/// Writes the records CSV for one replication batch.
pub fn write_records_csv<W: Write>(
    out: &mut W,
    batches: &[(u32, &[MetricsRecord])],
) -> io::Result<()> {
    writeln!(out, "{RECORDS_CSV_HEADER}")?;
    for (replication, records) in batches {
        for r in *records {
            writeln!(out, "{}", record_csv_line(*replication, r))?;
        }
    }
    Ok(())
}

/// One row of the cross-scenario summary CSV: medians of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub vehicles: u32,
    pub replication: u32,
    pub median_br: f64,
    pub median_eta: f64,
    pub median_sigma: Option<f64>,
    pub adaptations: u64,
}

pub const SUMMARY_CSV_HEADER: [&str; 7] = [
    "strategy",
    "vehicles",
    "replication",
    "median_br",
    "median_eta",
    "median_sigma",
    "adaptations",
];

impl SummaryRow {
    pub fn from_summary(
        strategy: &str,
        vehicles: u32,
        replication: u32,
        summary: &ReplicationSummary,
    ) -> Self {
        Self {
            strategy: strategy.to_string(),
            vehicles,
            replication,
            median_br: summary.br.median,
            median_eta: summary.eta.median,
            median_sigma: summary.sigma.map(|s| s.median),
            adaptations: summary.adaptations,
        }
    }

    pub fn csv_fields(&self) -> [String; 7] {
        [
            self.strategy.clone(),
            self.vehicles.to_string(),
            self.replication.to_string(),
            format!("{:.4}", self.median_br),
            format!("{:.4}", self.median_eta),
            self.median_sigma
                .map(|s| format!("{s:.4}"))
                .unwrap_or_default(),
            self.adaptations.to_string(),
        ]
    }
}

/// Writes the summary CSV. Strategy labels contain commas, so fields go
/// through a quoting CSV writer.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Beacon, Position, BEACON_SIZE_BYTES};
    use proptest::prelude::*;

    fn queue_of(copies: usize, own_pending: u32) -> WindowQueue {
        let entries = (0..copies)
            .map(|i| Beacon {
                sender_id: (i % 7) as NodeId,
                position: Position::default(),
                speed: 0.0,
                heading: 1,
                dbr: 5,
                timestamp: 0.0,
                size_bytes: BEACON_SIZE_BYTES,
            })
            .collect();
        WindowQueue {
            entries,
            own_pending,
        }
    }

    #[test]
    fn occupancy_counts_heard_plus_own() {
        let channel = ChannelParams::default();
        assert_eq!(channel_occupancy(&queue_of(317, 3), &channel), 80.0);
        assert_eq!(channel_occupancy(&queue_of(0, 4), &channel), 1.0);
        assert_eq!(channel_occupancy(&queue_of(0, 0), &channel), 0.0);
        // Occupancy may exceed 100% when more is heard than fits.
        assert_eq!(channel_occupancy(&queue_of(420, 0), &channel), 105.0);
    }

    #[test]
    fn balance_matches_hand_computation() {
        // own 10, neighbors {4, 6}: mean 20/3, squared deviations sum 56/3.
        let sigma = network_balance(10, &[4, 6], BalanceMode::VarianceOverMean).unwrap();
        assert!((sigma - 1.4).abs() < 1e-12);
        let cv = network_balance(10, &[4, 6], BalanceMode::CoefficientOfVariation).unwrap();
        assert!((cv - 56f64.sqrt() / 20.0).abs() < 1e-12);
    }

    #[test]
    fn balance_is_zero_for_homogeneous_rates() {
        for n in 1..6 {
            let neighbors = vec![7u32; n];
            for mode in [
                BalanceMode::VarianceOverMean,
                BalanceMode::CoefficientOfVariation,
            ] {
                assert_eq!(network_balance(7, &neighbors, mode).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn balance_requires_neighbors() {
        assert_eq!(
            network_balance(5, &[], BalanceMode::VarianceOverMean),
            Err(UndefinedBalance)
        );
    }

    proptest! {
        #[test]
        fn balance_is_permutation_invariant(
            own in 1u32..=10,
            mut neighbors in proptest::collection::vec(1u32..=10, 1..12),
        ) {
            let before = network_balance(own, &neighbors, BalanceMode::VarianceOverMean).unwrap();
            neighbors.reverse();
            let after = network_balance(own, &neighbors, BalanceMode::VarianceOverMean).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
            prop_assert!(before >= 0.0);
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert!((quantile_sorted(&sorted, 0.25) - 1.75).abs() < 1e-12);
        assert!((quantile_sorted(&sorted, 0.5) - 2.5).abs() < 1e-12);
        assert!((quantile_sorted(&sorted, 0.75) - 3.25).abs() < 1e-12);
        assert_eq!(quantile_sorted(&sorted, 1.0), 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    fn record(node: NodeId, window: u32, eta: f64, sigma: Option<f64>, br: u32) -> MetricsRecord {
        MetricsRecord {
            node_id: node,
            window,
            eta,
            sigma,
            br,
            adapted: false,
            overflow: false,
        }
    }

    #[test]
    fn aggregation_summarizes_each_metric() {
        let mut records = vec![
            record(0, 0, 50.0, Some(1.0), 4),
            record(1, 0, 60.0, None, 6),
            record(0, 1, 70.0, Some(3.0), 8),
            record(1, 1, 80.0, Some(2.0), 10),
        ];
        records[2].adapted = true;
        records[3].adapted = true;
        records[3].overflow = true;
        let s = aggregate_replication(&records);
        assert_eq!(s.record_count, 4);
        assert_eq!(s.adaptations, 2);
        assert_eq!(s.overflow_events, 1);
        assert!((s.eta.mean - 65.0).abs() < 1e-12);
        assert!((s.eta.median - 65.0).abs() < 1e-12);
        assert!((s.br.median - 7.0).abs() < 1e-12);
        let sigma = s.sigma.unwrap();
        assert!((sigma.median - 2.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_reports_absent_sigma() {
        let records = vec![record(0, 0, 10.0, None, 10)];
        assert_eq!(aggregate_replication(&records).sigma, None);
    }

    #[test]
    fn records_csv_lines_are_stable() {
        let mut r = record(3, 12, 80.0, Some(1.4), 6);
        r.adapted = true;
        assert_eq!(record_csv_line(5, &r), "5,3,12,80.0000,1.4000,6,1,0");
        let r2 = record(0, 0, 2.5, None, 10);
        assert_eq!(record_csv_line(0, &r2), "0,0,0,2.5000,,10,0,0");
    }

    #[test]
    fn summary_csv_quotes_labels_with_commas() {
        let rows = vec![SummaryRow {
            strategy: "SF(050,100)".to_string(),
            vehicles: 200,
            replication: 1,
            median_br: 7.0,
            median_eta: 64.25,
            median_sigma: None,
            adaptations: 42,
        }];
        let mut out = Vec::new();
        write_summary_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "strategy,vehicles,replication,median_br,median_eta,median_sigma,adaptations"
        );
        assert_eq!(
            lines.next().unwrap(),
            "\"SF(050,100)\",200,1,7.0000,64.2500,,42"
        );
    }
}
