//! Scenario configuration: a flat `key = value` text format with `#`
//! comments, full-field validation that collects every violation, and a
//! writer whose output parses back to an identical configuration.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::domain::{BeaconRateSet, ChannelParams, InvalidConfig, SdidiParams};
use crate::mobility::MobilityParams;
use crate::radio::{path_loss_db, RadioParams};
use crate::strategy::StrategyKind;

/// All violations found in one configuration, reported together.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub violations: Vec<InvalidConfig>,
}

impl ConfigError {
    fn one(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            violations: vec![InvalidConfig::new(field, reason)],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Complete description of one simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Ring-road circumference in meters.
    pub road_length: f64,
    /// Total lane count across both directions; must be even.
    pub lanes: u32,
    pub vehicle_count: u32,
    /// Simulated time per replication, seconds.
    pub sim_duration: f64,
    /// Beaconing window length, seconds.
    pub window: f64,
    pub replications: u32,
    pub base_seed: u64,
    /// Leading windows excluded from the metric records.
    pub warmup_windows: u32,
    /// Beacon rate every vehicle starts with; must belong to the rate set.
    pub initial_rate: u32,
    pub strategy: StrategyKind,
    pub rate_set: BeaconRateSet,
    pub channel: ChannelParams,
    pub radio: RadioParams,
    pub mobility: MobilityParams,
    /// SIEC accepts at most one vote per sender per window when set.
    pub dedup_senders: bool,
    /// Report balance as a textbook coefficient of variation when set.
    pub cv_textbook: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road_length: 10_000.0,
            lanes: 6,
            vehicle_count: 1000,
            sim_duration: 150.0,
            window: 1.0,
            replications: 50,
            base_seed: 42,
            warmup_windows: 0,
            initial_rate: 10,
            strategy: StrategyKind::Fredy(SdidiParams { d1: 50.0, d2: 100.0 }),
            rate_set: BeaconRateSet::default(),
            channel: ChannelParams::default(),
            radio: RadioParams::default(),
            mobility: MobilityParams::default(),
            dedup_senders: false,
            cv_textbook: false,
        }
    }
}

/// Parses a strategy descriptor: `fredy(d1,d2)`, `difra`, or `fixed(rate)`,
/// case-insensitive with optional whitespace.
pub fn parse_strategy(text: &str) -> Result<StrategyKind, String> {
    let s = text.trim().to_ascii_lowercase();
    if s == "difra" {
        return Ok(StrategyKind::Difra);
    }
    let call = |name: &str| -> Option<Vec<String>> {
        let body = s.strip_prefix(name)?.trim();
        let inner = body.strip_prefix('(')?.strip_suffix(')')?;
        Some(inner.split(',').map(|p| p.trim().to_string()).collect())
    };
    if let Some(args) = call("fredy") {
        if args.len() != 2 {
            return Err(format!("fredy takes (d1,d2), got {} argument(s)", args.len()));
        }
        let d1: f64 = args[0]
            .parse()
            .map_err(|_| format!("fredy d1 is not a number: {:?}", args[0]))?;
        let d2: f64 = args[1]
            .parse()
            .map_err(|_| format!("fredy d2 is not a number: {:?}", args[1]))?;
        return Ok(StrategyKind::Fredy(SdidiParams { d1, d2 }));
    }
    if let Some(args) = call("fixed") {
        if args.len() != 1 {
            return Err(format!("fixed takes (rate), got {} argument(s)", args.len()));
        }
        let rate: u32 = args[0]
            .parse()
            .map_err(|_| format!("fixed rate is not an integer: {:?}", args[0]))?;
        return Ok(StrategyKind::Fixed(rate));
    }
    Err(format!(
        "unknown strategy {text:?}; expected fredy(d1,d2), difra, or fixed(rate)"
    ))
}

/// Canonical text form, the inverse of [`parse_strategy`].
pub fn format_strategy(kind: &StrategyKind) -> String {
    match kind {
        StrategyKind::Fredy(p) => format!("fredy({},{})", p.d1, p.d2),
        StrategyKind::Difra => "difra".to_string(),
        StrategyKind::Fixed(r) => format!("fixed({r})"),
    }
}

/// Splits config text into `(key, value)` pairs. Blank lines and `#`
/// comments (full-line or trailing) are dropped; syntax errors carry the
/// 1-based line number.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    let mut violations = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                let key = key.trim();
                let value = value.trim();
                if key.is_empty() {
                    violations.push(InvalidConfig::new(
                        format!("line {}", lineno + 1),
                        "missing key before '='",
                    ));
                } else {
                    pairs.push((key.to_string(), value.to_string()));
                }
            }
            None => violations.push(InvalidConfig::new(
                format!("line {}", lineno + 1),
                format!("expected 'key = value', got {line:?}"),
            )),
        }
    }
    if violations.is_empty() {
        Ok(pairs)
    } else {
        Err(ConfigError { violations })
    }
}

/// Splits one `key=value` override argument.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError::one(
            "override",
            format!("expected key=value, got {arg:?}"),
        )),
    }
}

fn parse_scalar<T: std::str::FromStr>(
    key: &str,
    value: &str,
    violations: &mut Vec<InvalidConfig>,
) -> Option<T> {
    match value.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            violations.push(InvalidConfig::new(key, format!("cannot parse {value:?}")));
            None
        }
    }
}

fn parse_list_f64(key: &str, value: &str, violations: &mut Vec<InvalidConfig>) -> Option<Vec<f64>> {
    let items: Result<Vec<f64>, _> = value.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Some(v),
        _ => {
            violations.push(InvalidConfig::new(
                key,
                format!("expected a comma-separated list of numbers, got {value:?}"),
            ));
            None
        }
    }
}

fn parse_list_u32(key: &str, value: &str, violations: &mut Vec<InvalidConfig>) -> Option<Vec<u32>> {
    let items: Result<Vec<u32>, _> = value.split(',').map(|p| p.trim().parse::<u32>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Some(v),
        _ => {
            violations.push(InvalidConfig::new(
                key,
                format!("expected a comma-separated list of integers, got {value:?}"),
            ));
            None
        }
    }
}

#[derive(Default)]
struct ApplyOutcome {
    /// Radio geometry, tx power, or comm range changed.
    radio_touched: bool,
    /// The receiver sensitivity was set explicitly.
    rx_explicit: bool,
    rate_set_touched: bool,
    initial_rate_explicit: bool,
}

fn apply_pairs(
    cfg: &mut ScenarioConfig,
    pairs: &[(String, String)],
) -> Result<ApplyOutcome, ConfigError> {
    let mut out = ApplyOutcome::default();
    let mut violations = Vec::new();
    for (key, value) in pairs {
        let v = value.as_str();
        match key.as_str() {
            "road_length" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.road_length = x;
                }
            }
            "lanes" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.lanes = x;
                }
            }
            "vehicle_count" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.vehicle_count = x;
                }
            }
            "sim_duration" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.sim_duration = x;
                }
            }
            "window" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.window = x;
                }
            }
            "replications" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.replications = x;
                }
            }
            "base_seed" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.base_seed = x;
                }
            }
            "engine.warmup_windows" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.warmup_windows = x;
                }
            }
            "engine.initial_rate" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.initial_rate = x;
                    out.initial_rate_explicit = true;
                }
            }
            "strategy" => match parse_strategy(v) {
                Ok(s) => cfg.strategy = s,
                Err(reason) => violations.push(InvalidConfig::new(key, reason)),
            },
            "rate_set" => {
                if let Some(list) = parse_list_u32(key, v, &mut violations) {
                    match BeaconRateSet::new(list) {
                        Ok(set) => {
                            cfg.rate_set = set;
                            out.rate_set_touched = true;
                        }
                        Err(e) => violations.push(InvalidConfig::new(key, e.reason)),
                    }
                }
            }
            "channel.max_q" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.channel.max_q = x;
                }
            }
            "channel.alpha" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.channel.alpha = x;
                }
            }
            "comm_range" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.comm_range = x;
                    out.radio_touched = true;
                }
            }
            "radio.d0" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.d0 = x;
                    out.radio_touched = true;
                }
            }
            "radio.d_a" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.d_a = x;
                    out.radio_touched = true;
                }
            }
            "radio.d_b" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.d_b = x;
                    out.radio_touched = true;
                }
            }
            "radio.n0" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.n0 = x;
                    out.radio_touched = true;
                }
            }
            "radio.n_a" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.n_a = x;
                    out.radio_touched = true;
                }
            }
            "radio.n_b" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.n_b = x;
                    out.radio_touched = true;
                }
            }
            "radio.tx_power_dbm" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.tx_power_dbm = x;
                    out.radio_touched = true;
                }
            }
            "radio.rx_sensitivity_dbm" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.rx_sensitivity_dbm = x;
                    out.rx_explicit = true;
                }
            }
            "radio.shadowing_sigma_db" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.radio.shadowing_sigma_db = x;
                }
            }
            "mobility.lane_speeds_kmh" => {
                if let Some(list) = parse_list_f64(key, v, &mut violations) {
                    cfg.mobility.lane_speeds_kmh = list;
                }
            }
            "mobility.time_headway" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.mobility.idm.time_headway = x;
                }
            }
            "mobility.max_accel" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.mobility.idm.max_accel = x;
                }
            }
            "mobility.comfort_decel" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.mobility.idm.comfort_decel = x;
                }
            }
            "mobility.min_gap" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.mobility.idm.min_gap = x;
                }
            }
            "mobility.exponent" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.mobility.idm.exponent = x;
                }
            }
            "strategy.dedup_senders" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.dedup_senders = x;
                }
            }
            "metrics.cv_textbook" => {
                if let Some(x) = parse_scalar(key, v, &mut violations) {
                    cfg.cv_textbook = x;
                }
            }
            _ => violations.push(InvalidConfig::new(key, "unknown configuration key")),
        }
    }
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(ConfigError { violations })
    }
}

impl ScenarioConfig {
    /// Number of beaconing windows one replication runs.
    pub fn windows(&self) -> u32 {
        (self.sim_duration / self.window).round() as u32
    }

    pub fn comm_range(&self) -> f64 {
        self.radio.comm_range
    }

    pub fn strategy_label(&self) -> String {
        self.strategy.label()
    }

    /// Parses a full configuration from text: defaults, then the file's
    /// assignments (later ones win), then validation. The receiver
    /// sensitivity recalibrates from the radio geometry unless the file
    /// pins it; `initial_rate` follows a changed rate set's maximum unless
    /// set explicitly.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_kv_text(text)?;
        let mut cfg = Self::default();
        let outcome = apply_pairs(&mut cfg, &pairs)?;
        finish_application(&mut cfg, &outcome);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::one("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides in place with the same recalibration
    /// rules as [`parse_str`]. The caller revalidates when done mutating.
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        let outcome = apply_pairs(self, pairs)?;
        finish_application(self, &outcome);
        Ok(())
    }

    /// Checks every semantic invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v: Vec<InvalidConfig> = Vec::new();
        let bad = |v: &mut Vec<InvalidConfig>, f: &str, r: String| v.push(InvalidConfig::new(f, r));

        if !(self.road_length.is_finite() && self.road_length > 0.0) {
            bad(&mut v, "road_length", format!("must be positive, got {}", self.road_length));
        }
        if self.lanes < 2 || !self.lanes.is_multiple_of(2) {
            bad(&mut v, "lanes", format!("must be an even count >= 2, got {}", self.lanes));
        }
        if self.vehicle_count == 0 {
            bad(&mut v, "vehicle_count", "must be at least 1".to_string());
        }
        if !(self.sim_duration.is_finite() && self.sim_duration > 0.0) {
            bad(&mut v, "sim_duration", format!("must be positive, got {}", self.sim_duration));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            bad(&mut v, "window", format!("must be positive, got {}", self.window));
        } else if self.sim_duration > 0.0 && self.windows() == 0 {
            bad(&mut v, "window", "longer than the whole simulation".to_string());
        } else if self.warmup_windows >= self.windows().max(1) {
            bad(
                &mut v,
                "engine.warmup_windows",
                format!(
                    "must leave at least one recorded window ({} of {})",
                    self.warmup_windows,
                    self.windows()
                ),
            );
        }
        if self.replications == 0 {
            bad(&mut v, "replications", "must be at least 1".to_string());
        }
        if !self.rate_set.contains(self.initial_rate) {
            bad(
                &mut v,
                "engine.initial_rate",
                format!("{} is not in the rate set", self.initial_rate),
            );
        }
        if self.channel.max_q == 0 {
            bad(&mut v, "channel.max_q", "must be at least 1".to_string());
        }
        if !(self.channel.alpha > 0.0 && self.channel.alpha <= 1.0) {
            bad(
                &mut v,
                "channel.alpha",
                format!("must be in (0, 1], got {}", self.channel.alpha),
            );
        }
        let r = &self.radio;
        if !(r.comm_range.is_finite() && r.comm_range > 0.0) {
            bad(&mut v, "comm_range", format!("must be positive, got {}", r.comm_range));
        }
        if !(r.d0 > 0.0 && r.d0 < r.d_a && r.d_a < r.d_b) {
            bad(
                &mut v,
                "radio.d0",
                format!("breakpoints must satisfy 0 < d0 < d_a < d_b, got {} / {} / {}", r.d0, r.d_a, r.d_b),
            );
        }
        for (field, n) in [("radio.n0", r.n0), ("radio.n_a", r.n_a), ("radio.n_b", r.n_b)] {
            if !(n.is_finite() && n > 0.0) {
                bad(&mut v, field, format!("exponent must be positive, got {n}"));
            }
        }
        if !(r.shadowing_sigma_db.is_finite() && r.shadowing_sigma_db >= 0.0) {
            bad(
                &mut v,
                "radio.shadowing_sigma_db",
                format!("must be >= 0, got {}", r.shadowing_sigma_db),
            );
        }
        match &self.strategy {
            StrategyKind::Fredy(p) => {
                if !(p.d1.is_finite() && p.d2.is_finite() && 0.0 <= p.d1 && p.d1 < p.d2) {
                    bad(
                        &mut v,
                        "strategy",
                        format!("fredy needs 0 <= d1 < d2, got ({},{})", p.d1, p.d2),
                    );
                } else if p.d2 > r.comm_range {
                    bad(
                        &mut v,
                        "strategy",
                        format!("fredy d2 ({}) exceeds comm_range ({})", p.d2, r.comm_range),
                    );
                }
            }
            StrategyKind::Fixed(rate) => {
                if !self.rate_set.contains(*rate) {
                    bad(&mut v, "strategy", format!("fixed rate {rate} is not in the rate set"));
                }
            }
            StrategyKind::Difra => {}
        }
        let half = (self.lanes / 2) as usize;
        if self.lanes >= 2 && self.mobility.lane_speeds_kmh.len() != half {
            bad(
                &mut v,
                "mobility.lane_speeds_kmh",
                format!(
                    "needs one speed per lane rank ({} lanes per direction), got {}",
                    half,
                    self.mobility.lane_speeds_kmh.len()
                ),
            );
        }
        if self.mobility.lane_speeds_kmh.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            bad(&mut v, "mobility.lane_speeds_kmh", "all speeds must be positive".to_string());
        }
        let idm = &self.mobility.idm;
        for (field, x) in [
            ("mobility.time_headway", idm.time_headway),
            ("mobility.max_accel", idm.max_accel),
            ("mobility.comfort_decel", idm.comfort_decel),
            ("mobility.min_gap", idm.min_gap),
            ("mobility.exponent", idm.exponent),
        ] {
            if !(x.is_finite() && x > 0.0) {
                bad(&mut v, field, format!("must be positive, got {x}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations: v })
        }
    }

    /// Serializes to the text format. Parsing the output yields an equal
    /// configuration; floats print with shortest round-trip precision.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let rates = self
            .rate_set
            .rates()
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let speeds = self
            .mobility
            .lane_speeds_kmh
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        s.push_str("# scenario\n");
        s.push_str(&format!("road_length = {}\n", self.road_length));
        s.push_str(&format!("lanes = {}\n", self.lanes));
        s.push_str(&format!("vehicle_count = {}\n", self.vehicle_count));
        s.push_str(&format!("sim_duration = {}\n", self.sim_duration));
        s.push_str(&format!("window = {}\n", self.window));
        s.push_str(&format!("replications = {}\n", self.replications));
        s.push_str(&format!("base_seed = {}\n", self.base_seed));
        s.push_str(&format!("engine.warmup_windows = {}\n", self.warmup_windows));
        s.push_str("\n# beaconing\n");
        s.push_str(&format!("strategy = {}\n", format_strategy(&self.strategy)));
        s.push_str(&format!("rate_set = {rates}\n"));
        s.push_str(&format!("engine.initial_rate = {}\n", self.initial_rate));
        s.push_str(&format!("strategy.dedup_senders = {}\n", self.dedup_senders));
        s.push_str(&format!("metrics.cv_textbook = {}\n", self.cv_textbook));
        s.push_str("\n# channel\n");
        s.push_str(&format!("channel.max_q = {}\n", self.channel.max_q));
        s.push_str(&format!("channel.alpha = {}\n", self.channel.alpha));
        s.push_str("\n# radio\n");
        s.push_str(&format!("comm_range = {}\n", self.radio.comm_range));
        s.push_str(&format!("radio.d0 = {}\n", self.radio.d0));
        s.push_str(&format!("radio.d_a = {}\n", self.radio.d_a));
        s.push_str(&format!("radio.d_b = {}\n", self.radio.d_b));
        s.push_str(&format!("radio.n0 = {}\n", self.radio.n0));
        s.push_str(&format!("radio.n_a = {}\n", self.radio.n_a));
        s.push_str(&format!("radio.n_b = {}\n", self.radio.n_b));
        s.push_str(&format!("radio.tx_power_dbm = {}\n", self.radio.tx_power_dbm));
        s.push_str(&format!(
            "radio.rx_sensitivity_dbm = {}\n",
            self.radio.rx_sensitivity_dbm
        ));
        s.push_str(&format!(
            "radio.shadowing_sigma_db = {}\n",
            self.radio.shadowing_sigma_db
        ));
        s.push_str("\n# mobility\n");
        s.push_str(&format!("mobility.lane_speeds_kmh = {speeds}\n"));
        s.push_str(&format!("mobility.time_headway = {}\n", self.mobility.idm.time_headway));
        s.push_str(&format!("mobility.max_accel = {}\n", self.mobility.idm.max_accel));
        s.push_str(&format!("mobility.comfort_decel = {}\n", self.mobility.idm.comfort_decel));
        s.push_str(&format!("mobility.min_gap = {}\n", self.mobility.idm.min_gap));
        s.push_str(&format!("mobility.exponent = {}\n", self.mobility.idm.exponent));
        s
    }
}

fn finish_application(cfg: &mut ScenarioConfig, outcome: &ApplyOutcome) {
    if outcome.radio_touched && !outcome.rx_explicit {
        cfg.radio.rx_sensitivity_dbm =
            cfg.radio.tx_power_dbm - path_loss_db(cfg.radio.comm_range, &cfg.radio);
    }
    if outcome.rate_set_touched && !outcome.initial_rate_explicit {
        cfg.initial_rate = cfg.rate_set.br_max();
    }
}
