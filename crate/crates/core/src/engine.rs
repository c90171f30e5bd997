//! Simulation engine: the per-window protocol loop, single replications,
//! and the multi-scenario experiment harness with deterministic outputs.
//!
//! Distribution contract: inside the loop a node's strategy sees only its
//! own vehicle state and its own window queue; everything it learns about
//! other nodes arrives as beacons through the radio module. The metrics
//! step, by contrast, is an omniscient observer and may read true rates.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::{BeaconRateSet, ChannelParams, NodeId, SdidiParams, Vehicle};
use crate::metrics::{
    aggregate_replication, channel_occupancy, network_balance, write_records_csv,
    write_summary_csv, BalanceMode, MetricsRecord, ReplicationSummary, SummaryRow,
};
use crate::mobility::{self, MobilityError};
use crate::radio::{broadcast_window, RadioParams};
use crate::strategy::{decide_window, StrategyEnv, StrategyKind};

/// Named RNG streams derived from one master seed per replication, so that
/// toggling one stochastic component does not perturb the others.
pub const STREAM_MOBILITY: u64 = 1 << 32;
pub const STREAM_RADIO: u64 = 2 << 32;
/// Per-node stream: `STREAM_SDIDI_BASE | node_id`.
pub const STREAM_SDIDI_BASE: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Protocol layer of one replication: beacon exchange, strategy decisions,
/// and metric recording over externally supplied vehicle state. Positions
/// come from the caller, which makes scripted topologies (static clusters,
/// merges, splits) as easy as full mobility.
pub struct ProtocolSim {
    strategy: StrategyKind,
    channel: ChannelParams,
    rates: BeaconRateSet,
    radio: RadioParams,
    road_length: f64,
    window_len: f64,
    dedup_senders: bool,
    balance_mode: BalanceMode,
    /// Desired-rate stamp each node writes into next window's beacons.
    stamps: Vec<u32>,
    /// Whether node i's rate changed at the boundary into the current window.
    adapted: Vec<bool>,
    radio_rng: ChaCha12Rng,
    node_rngs: Vec<ChaCha12Rng>,
    window_index: u32,
}

impl ProtocolSim {
    /// Vehicles must already be protocol-initialized (`init_protocol`) and
    /// carry dense ids 0..node_count matching their slice order.
    pub fn new(cfg: &ScenarioConfig, node_count: usize, master_seed: u64) -> Self {
        let mut radio_rng = ChaCha12Rng::seed_from_u64(master_seed);
        radio_rng.set_stream(STREAM_RADIO);
        let node_rngs = (0..node_count)
            .map(|i| {
                let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
                rng.set_stream(STREAM_SDIDI_BASE | i as u64);
                rng
            })
            .collect();
        Self {
            strategy: cfg.strategy,
            channel: cfg.channel,
            rates: cfg.rate_set.clone(),
            radio: cfg.radio.clone(),
            road_length: cfg.road_length,
            window_len: cfg.window,
            dedup_senders: cfg.dedup_senders,
            balance_mode: if cfg.cv_textbook {
                BalanceMode::CoefficientOfVariation
            } else {
                BalanceMode::VarianceOverMean
            },
            stamps: vec![cfg.initial_rate; node_count],
            adapted: vec![false; node_count],
            radio_rng,
            node_rngs,
            window_index: 0,
        }
    }

    pub fn window_index(&self) -> u32 {
        self.window_index
    }

    /// Runs one beaconing window over the given vehicle states: broadcast
    /// at each node's current rate, record metrics, let every node decide,
    /// then apply the decisions at the window boundary.
    pub fn run_window(&mut self, vehicles: &mut [Vehicle]) -> Vec<MetricsRecord> {
        debug_assert_eq!(vehicles.len(), self.stamps.len());
        debug_assert!(vehicles.iter().enumerate().all(|(i, v)| v.id == i as NodeId));

        let window_start = f64::from(self.window_index) * self.window_len;
        let queues = broadcast_window(
            vehicles,
            &self.stamps,
            self.road_length,
            window_start,
            self.window_len,
            &self.radio,
            &mut self.radio_rng,
        );

        let mut records = Vec::with_capacity(vehicles.len());
        for (i, queue) in queues.iter().enumerate() {
            let mut sender_ids: Vec<NodeId> = queue.entries.iter().map(|b| b.sender_id).collect();
            sender_ids.sort_unstable();
            sender_ids.dedup();
            let neighbor_rates: Vec<u32> = sender_ids
                .iter()
                .map(|&id| vehicles[id as usize].current_br)
                .collect();
            records.push(MetricsRecord {
                node_id: vehicles[i].id,
                window: self.window_index,
                eta: channel_occupancy(queue, &self.channel),
                sigma: network_balance(vehicles[i].current_br, &neighbor_rates, self.balance_mode)
                    .ok(),
                br: vehicles[i].current_br,
                adapted: self.adapted[i],
                overflow: queue.occupancy_count() > u64::from(self.channel.max_q),
            });
        }

        let env = StrategyEnv {
            channel: &self.channel,
            rates: &self.rates,
            road_length: self.road_length,
            dedup_senders: self.dedup_senders,
        };
        for (i, vehicle) in vehicles.iter_mut().enumerate() {
            let decision = decide_window(
                &self.strategy,
                vehicle,
                &queues[i],
                &env,
                &mut self.node_rngs[i],
            );
            let changed = decision.next_br != vehicle.current_br;
            self.adapted[i] = changed;
            if changed {
                vehicle.adaptation_count += 1;
            }
            vehicle.current_br = decision.next_br;
            self.stamps[i] = decision.stamp_dbr;
        }

        self.window_index += 1;
        records
    }
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub scenario: String,
    pub strategy: String,
    pub replication: u32,
    /// Master seed the replication ran with (base_seed + replication).
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub summary: ReplicationSummary,
}

/// One mobility snapshot row for `--trace` output.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub node: NodeId,
    pub x: f64,
    pub y: f64,
    pub lane: u32,
    pub speed: f64,
}

pub fn scenario_label(cfg: &ScenarioConfig) -> String {
    format!("N{:04}", cfg.vehicle_count)
}

/// Runs one full replication: IDM mobility plus the protocol loop, one
/// window at a time. Windows below `warmup_windows` are simulated but not
/// recorded.
pub fn run_replication(cfg: &ScenarioConfig, replication: u32) -> Result<ReplicationResult, SimError> {
    run_replication_traced(cfg, replication, None)
}

/// Like [`run_replication`], additionally collecting per-window vehicle
/// snapshots into `trace` when given.
pub fn run_replication_traced(
    cfg: &ScenarioConfig,
    replication: u32,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<ReplicationResult, SimError> {
    let seed = cfg.base_seed.wrapping_add(u64::from(replication));
    let mut state = mobility::init_traffic(cfg, seed)?;
    for v in state.vehicles_mut() {
        v.init_protocol(cfg.initial_rate, &cfg.rate_set);
    }
    let mut sim = ProtocolSim::new(cfg, state.vehicles().len(), seed);

    let windows = cfg.windows();
    let mut records = Vec::new();
    for w in 0..windows {
        mobility::step(&mut state, cfg.window);
        let window_records = sim.run_window(state.vehicles_mut());
        if w >= cfg.warmup_windows {
            records.extend(window_records);
        }
        if let Some(rows) = trace.as_deref_mut() {
            let time = f64::from(w + 1) * cfg.window;
            for v in state.vehicles() {
                rows.push(TraceRow {
                    time,
                    node: v.id,
                    x: v.position.x,
                    y: v.position.y,
                    lane: v.lane,
                    speed: v.speed,
                });
            }
        }
    }

    let summary = aggregate_replication(&records);
    Ok(ReplicationResult {
        scenario: scenario_label(cfg),
        strategy: cfg.strategy_label(),
        replication,
        seed,
        records,
        summary,
    })
}

/// A replication that failed, with enough context to rerun it.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentFailure {
    pub scenario: String,
    pub strategy: String,
    pub replication: u32,
    pub error: String,
}

/// Outcome of a whole experiment run.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub summary_rows: Vec<SummaryRow>,
    pub failures: Vec<ExperimentFailure>,
    /// Files written into the output directory, relative names.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct ManifestScenario {
    scenario: String,
    strategy: String,
    vehicles: u32,
    replications: u32,
    seeds: Vec<u64>,
    config: String,
}

#[derive(Serialize)]
struct RunManifest {
    version: String,
    scenarios: Vec<ManifestScenario>,
    outputs: Vec<String>,
    failures: Vec<ExperimentFailure>,
}

fn sanitize_label(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    while s.ends_with('_') {
        s.pop();
    }
    s
}

/// Runs every configured scenario for its full replication count and writes
/// deterministic outputs into `out_dir`: one records CSV per scenario, a
/// cross-scenario `summary.csv`, optional `trace_*.csv` files, and a
/// `manifest.json` with config snapshots and seeds.
///
/// Replications run concurrently (bounded by `workers` when given); results
/// are keyed and sorted so the output bytes do not depend on scheduling.
/// A failed replication is recorded and the rest continue.
pub fn run_experiment(
    cfgs: &[ScenarioConfig],
    workers: Option<usize>,
    out_dir: &Path,
    trace: bool,
) -> Result<ExperimentOutcome, SimError> {
    for cfg in cfgs {
        cfg.validate()?;
    }
    fs::create_dir_all(out_dir)?;

    let jobs: Vec<(usize, u32)> = cfgs
        .iter()
        .enumerate()
        .flat_map(|(ci, cfg)| (0..cfg.replications).map(move |r| (ci, r)))
        .collect();

    type JobOutcome = (usize, u32, Result<(ReplicationResult, Vec<TraceRow>), SimError>);
    let run_job = |&(ci, rep): &(usize, u32)| -> JobOutcome {
        let cfg = &cfgs[ci];
        if trace {
            let mut rows = Vec::new();
            let result = run_replication_traced(cfg, rep, Some(&mut rows));
            (ci, rep, result.map(|r| (r, rows)))
        } else {
            (ci, rep, run_replication(cfg, rep).map(|r| (r, Vec::new())))
        }
    };
    let results: Vec<JobOutcome> = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("worker pool")
            .install(|| jobs.par_iter().map(run_job).collect()),
        None => jobs.par_iter().map(run_job).collect(),
    };

    let mut files: Vec<String> = Vec::new();
    let mut summary_rows: Vec<SummaryRow> = Vec::new();
    let mut failures: Vec<ExperimentFailure> = Vec::new();
    let mut manifest_scenarios: Vec<ManifestScenario> = Vec::new();

    let mut cursor = 0usize;
    for (ci, cfg) in cfgs.iter().enumerate() {
        let label = cfg.strategy_label();
        let scenario = scenario_label(cfg);
        let mut batches: Vec<(u32, ReplicationResult, Vec<TraceRow>)> = Vec::new();
        while cursor < results.len() && results[cursor].0 == ci {
            let (_, rep, outcome) = &results[cursor];
            match outcome {
                Ok((result, rows)) => batches.push((*rep, result.clone(), rows.clone())),
                Err(e) => failures.push(ExperimentFailure {
                    scenario: scenario.clone(),
                    strategy: label.clone(),
                    replication: *rep,
                    error: e.to_string(),
                }),
            }
            cursor += 1;
        }

        let stem = format!("{}_{}", sanitize_label(&label), scenario);
        if !batches.is_empty() {
            let records_name = format!("records_{stem}.csv");
            let mut buf = Vec::new();
            let batch_refs: Vec<(u32, &[MetricsRecord])> = batches
                .iter()
                .map(|(rep, result, _)| (*rep, result.records.as_slice()))
                .collect();
            write_records_csv(&mut buf, &batch_refs)?;
            fs::write(out_dir.join(&records_name), buf)?;
            files.push(records_name);

            if trace {
                let trace_name = format!("trace_{stem}.csv");
                let mut buf = String::from("replication,time,node,x,y,lane,speed\n");
                for (rep, _, rows) in &batches {
                    for row in rows {
                        buf.push_str(&format!(
                            "{},{:.1},{},{:.3},{:.3},{},{:.3}\n",
                            rep, row.time, row.node, row.x, row.y, row.lane, row.speed
                        ));
                    }
                }
                fs::write(out_dir.join(&trace_name), buf)?;
                files.push(trace_name);
            }

            for (rep, result, _) in &batches {
                summary_rows.push(SummaryRow::from_summary(
                    &result.strategy,
                    cfg.vehicle_count,
                    *rep,
                    &result.summary,
                ));
            }
        }

        manifest_scenarios.push(ManifestScenario {
            scenario,
            strategy: label,
            vehicles: cfg.vehicle_count,
            replications: cfg.replications,
            seeds: (0..cfg.replications)
                .map(|r| cfg.base_seed.wrapping_add(u64::from(r)))
                .collect(),
            config: cfg.to_kv_string(),
        });
    }

    summary_rows.sort_by(|a, b| {
        (&a.strategy, a.vehicles, a.replication).cmp(&(&b.strategy, b.vehicles, b.replication))
    });
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &summary_rows)?;
    fs::write(out_dir.join("summary.csv"), buf)?;
    files.push("summary.csv".to_string());

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenarios: manifest_scenarios,
        outputs: files.clone(),
        failures: failures.clone(),
    };
    let mut manifest_file = fs::File::create(out_dir.join("manifest.json"))?;
    writeln!(manifest_file, "{}", serde_json::to_string_pretty(&manifest)?)?;
    files.push("manifest.json".to_string());

    Ok(ExperimentOutcome {
        summary_rows,
        failures,
        files,
    })
}

/// Desk-scale experiment: 2 km ring, densities {100, 200, 400}, 60 s, 20
/// replications, two warmup windows, three strategies. Small enough to run
/// in a couple of minutes.
pub fn desk_profile(base: &ScenarioConfig) -> Vec<ScenarioConfig> {
    let strategies = [
        StrategyKind::Fredy(SdidiParams { d1: 0.0, d2: 50.0 }),
        StrategyKind::Fredy(SdidiParams { d1: 50.0, d2: 100.0 }),
        StrategyKind::Difra,
    ];
    let mut cfgs = Vec::new();
    for strategy in strategies {
        for vehicles in [100u32, 200, 400] {
            let mut cfg = base.clone();
            cfg.road_length = 2000.0;
            cfg.sim_duration = 60.0;
            cfg.window = 1.0;
            cfg.replications = 20;
            cfg.warmup_windows = 2;
            cfg.vehicle_count = vehicles;
            cfg.strategy = strategy;
            cfgs.push(cfg);
        }
    }
    cfgs
}

/// Full-scale experiment: 10 km ring, densities 500..=2000 step 250, 150 s,
/// 50 replications, all 15 sDiDi threshold pairs plus the DIFRA baseline.
pub fn paper_profile(base: &ScenarioConfig) -> Vec<ScenarioConfig> {
    let thresholds = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0];
    let mut strategies = Vec::new();
    for (i, &d1) in thresholds.iter().enumerate() {
        for &d2 in &thresholds[i + 1..] {
            strategies.push(StrategyKind::Fredy(SdidiParams { d1, d2 }));
        }
    }
    strategies.push(StrategyKind::Difra);
    let mut cfgs = Vec::new();
    for strategy in strategies {
        for vehicles in (500..=2000).step_by(250) {
            let mut cfg = base.clone();
            cfg.road_length = 10_000.0;
            cfg.sim_duration = 150.0;
            cfg.window = 1.0;
            cfg.replications = 50;
            cfg.vehicle_count = vehicles;
            cfg.strategy = strategy;
            cfgs.push(cfg);
        }
    }
    cfgs
}
