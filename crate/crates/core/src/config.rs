//! Scenario configuration: TOML schema, named presets, dotted-key overrides
//! and validation.
//!
//! A user file only lists what differs from the preset selected by
//! `vehicles.policy` and `vehicles.preset`. Keys ending in `_deg` are read as
//! degrees and stored in radians under the key without the suffix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordination::CoopParams;
use crate::dynamics::VehicleLimits;
use crate::error::ConfigError;
use crate::estimation::SensingParams;
use crate::idm::IdmParams;
use crate::lane_change::MobilParams;
use crate::track::TrackSpec;
use crate::tracking::{PidParams, TrackerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Egocentric,
    Cooperative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Normal,
    Aggressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehiclesConfig {
    pub count: usize,
    pub policy: Policy,
    pub preset: Preset,
    /// Name of the actuator-limit preset the `[limits]` table starts from.
    pub limits_preset: String,
    /// Offset of lane `i`'s first vehicle, as a fraction of that lane's
    /// spacing, is `i * stagger`.
    pub stagger: f64,
    pub initial_speed: f64,
    /// Vehicles that accept live commands.
    pub gamified: Vec<usize>,
}

impl Default for VehiclesConfig {
    fn default() -> Self {
        Self {
            count: 16,
            policy: Policy::Egocentric,
            preset: Preset::Normal,
            limits_preset: "minicar".into(),
            stagger: 0.5,
            initial_speed: 0.0,
            gamified: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeConfig {
    /// Shortest longitudinal distance of a lane change (m).
    pub min_distance: f64,
    /// Time after a completed change before another may start (s).
    pub cooldown: f64,
    /// A pending intent is dropped after this long without a change (s).
    pub intent_timeout: f64,
    /// A change still running after this long is abandoned (s).
    pub execution_timeout: f64,
}

impl Default for LaneChangeConfig {
    fn default() -> Self {
        Self { min_distance: 0.65, cooldown: 2.0, intent_timeout: 20.0, execution_timeout: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Stop,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    pub kind: EventKind,
    pub vehicle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Initial period excluded from throughput and queue statistics (s).
    pub warmup: f64,
    /// Sliding throughput window length (s).
    pub window: f64,
    /// Offset between consecutive windows (s).
    pub step: f64,
    /// A vehicle slower than this counts as waiting (m/s).
    pub queue_speed: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { warmup: 20.0, window: 20.0, step: 1.0, queue_speed: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub halt_on_collision: bool,
    /// Plan every n-th tick.
    pub planner_divider: u32,
    /// Record every n-th tick.
    pub record_every: u32,
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { halt_on_collision: false, planner_divider: 1, record_every: 1, parallel: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    /// Frames streamed per second of simulated time.
    pub frame_rate: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self { frame_rate: 30.0 }
    }
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub track: TrackSpec,
    pub vehicles: VehiclesConfig,
    pub limits: VehicleLimits,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub coop: CoopParams,
    pub lane_change: LaneChangeConfig,
    pub tracking: TrackerParams,
    pub pid: PidParams,
    pub sensing: SensingParams,
    pub events: Vec<EventSpec>,
    pub metrics: MetricsConfig,
    pub engine: EngineConfig,
    pub game: GameConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::preset(Policy::Egocentric, Preset::Normal)
    }
}

impl ScenarioConfig {
    /// The sixteen-car stop-disturbance scenario for one scheme.
    pub fn preset(policy: Policy, preset: Preset) -> Self {
        let idm = match preset {
            Preset::Normal => IdmParams::normal(),
            Preset::Aggressive => IdmParams::aggressive(),
        };
        let mut mobil = match preset {
            Preset::Normal => MobilParams::normal(&idm),
            Preset::Aggressive => MobilParams::aggressive(&idm),
        };
        mobil.cooperative = policy == Policy::Cooperative;
        let limits = VehicleLimits::minicar();
        Self {
            name: "scenario".into(),
            seed: 0,
            duration: 200.0,
            dt: 0.01,
            track: TrackSpec::default(),
            vehicles: VehiclesConfig { policy, preset, ..VehiclesConfig::default() },
            limits,
            idm,
            mobil,
            coop: CoopParams::default(),
            lane_change: LaneChangeConfig::default(),
            tracking: TrackerParams::for_wheelbase(limits.wheelbase),
            pid: PidParams::default(),
            sensing: SensingParams::default(),
            events: vec![EventSpec { time: 20.0, kind: EventKind::Stop, vehicle: 0 }],
            metrics: MetricsConfig::default(),
            engine: EngineConfig::default(),
            game: GameConfig::default(),
        }
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |key: &str, r: Result<(), String>| r.map_err(|m| ConfigError::invalid(key, m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(ConfigError::invalid("duration", format!("must be >= 0, got {}", self.duration)));
        }
        let n = self.vehicles.count;
        if n == 0 {
            return Err(ConfigError::invalid("vehicles.count", "need at least one vehicle"));
        }
        if !(0.0..1.0).contains(&self.vehicles.stagger) {
            return Err(ConfigError::invalid("vehicles.stagger", "must be in [0, 1)"));
        }
        if let Some(&id) = self.vehicles.gamified.iter().find(|&&id| id >= n) {
            return Err(ConfigError::invalid("vehicles.gamified", format!("vehicle {id} does not exist")));
        }
        if self.track.checkpoint_s.len() != self.track.lane_lengths.len() {
            return Err(ConfigError::invalid("track.checkpoint_s", "need one checkpoint per lane"));
        }
        check("limits", self.limits.validate())?;
        check("idm", self.idm.validate())?;
        check("mobil", self.mobil.validate())?;
        check("coop", self.coop.validate())?;
        check("sensing", self.sensing.validate())?;
        if !(self.vehicles.initial_speed >= 0.0 && self.vehicles.initial_speed <= self.limits.max_speed) {
            return Err(ConfigError::invalid("vehicles.initial_speed", "must be within [0, limits.max_speed]"));
        }
        if !(self.lane_change.min_distance > 0.0) {
            return Err(ConfigError::invalid("lane_change.min_distance", "must be > 0"));
        }
        if !(self.tracking.l1 > 0.0 && self.tracking.l2 > 0.0) {
            return Err(ConfigError::invalid("tracking", "l1 and l2 must be > 0"));
        }
        if self.engine.planner_divider == 0 || self.engine.record_every == 0 {
            return Err(ConfigError::invalid("engine", "planner_divider and record_every must be >= 1"));
        }
        if !(self.game.frame_rate > 0.0) {
            return Err(ConfigError::invalid("game.frame_rate", "must be > 0"));
        }
        let m = &self.metrics;
        if !(m.window > 0.0 && m.step > 0.0 && m.warmup >= 0.0) {
            return Err(ConfigError::invalid("metrics", "window and step must be > 0, warmup >= 0"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.vehicle >= n {
                return Err(ConfigError::invalid(
                    &format!("events[{i}].vehicle"),
                    format!("vehicle {} does not exist", e.vehicle),
                ));
            }
            if !(e.time >= 0.0) {
                return Err(ConfigError::invalid(&format!("events[{i}].time"), "must be >= 0"));
            }
        }
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(ConfigError::invalid("events", "events must be sorted by time"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Reads a scenario file (TOML, or JSON such as a run summary embedding a
/// `config` object) and applies `key=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::NotFound(path.to_owned()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
    let mut cfg = if path.extension().is_some_and(|e| e == "json") {
        parse_json_config(&text, overrides)?
    } else {
        parse_config(&text, overrides)?
    };
    if cfg.name == "scenario" {
        if let Some(stem) = path.file_stem() {
            cfg.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(cfg)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(user, overrides)
}

fn parse_json_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let mut json: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if let Some(inner) = json.get_mut("config") {
        json = inner.take();
    }
    let user = toml::Table::try_from(json).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(user, overrides)
}

/// Merges a user table over its preset, applies overrides and degree keys,
/// then deserializes and validates.
pub fn resolve(mut user: toml::Table, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    convert_degrees(&mut user, "")?;

    let vehicles = user.get("vehicles").and_then(|v| v.as_table());
    let pick = |key: &str| vehicles.and_then(|t| t.get(key)).cloned();
    let policy: Policy = match pick("policy") {
        Some(v) => v.try_into().map_err(|e| ConfigError::invalid("vehicles.policy", e.to_string()))?,
        None => Policy::default(),
    };
    let preset: Preset = match pick("preset") {
        Some(v) => v.try_into().map_err(|e| ConfigError::invalid("vehicles.preset", e.to_string()))?,
        None => Preset::default(),
    };
    let mut base = ScenarioConfig::preset(policy, preset);
    if let Some(name) = pick("limits_preset") {
        let name = name.as_str().unwrap_or_default().to_owned();
        base.limits = VehicleLimits::by_name(&name)
            .ok_or_else(|| ConfigError::invalid("vehicles.limits_preset", format!("unknown preset `{name}`")))?;
        base.tracking = TrackerParams::for_wheelbase(base.limits.wheelbase);
    }

    let mut merged = toml::Table::try_from(&base).expect("config serializes");
    merge(&mut merged, user);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let inner = inner.lines().next().unwrap_or_default().trim().to_owned();
        if path.is_empty() || path == "." {
            ConfigError::Parse(inner)
        } else {
            ConfigError::invalid(&path, inner)
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.to_owned()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::invalid(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

fn convert_degrees(table: &mut toml::Table, prefix: &str) -> Result<(), ConfigError> {
    let keys: Vec<String> = table.keys().cloned().collect();
    for k in keys {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let Some(base) = k.strip_suffix("_deg") {
            if table.contains_key(base) {
                return Err(ConfigError::invalid(&path, format!("both `{base}` and `{k}` given")));
            }
            let v = table.remove(&k).expect("key present");
            let deg = match v {
                toml::Value::Float(f) => f,
                toml::Value::Integer(i) => i as f64,
                _ => return Err(ConfigError::invalid(&path, "expected a number of degrees")),
            };
            table.insert(base.to_owned(), toml::Value::Float(deg.to_radians()));
        } else if let Some(toml::Value::Table(sub)) = table.get_mut(&k) {
            convert_degrees(sub, &path)?;
        }
    }
    Ok(())
}
