//! Run recording, derived statistics and file exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::metrics::{is_crossing, throughput_from_crossings, QueueStats, ThroughputResult};
use crate::track::LaneId;

/// One vehicle at one recorded tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub tick: u64,
    pub t: f64,
    pub id: usize,
    pub lane: LaneId,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub psi: f64,
    pub lc_progress: Option<f64>,
    pub lc_target: Option<LaneId>,
    pub accel: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Stop,
    Resume,
    LaneChangeStart,
    LaneChangeComplete,
    LaneChangeAbandon,
    LaneChangeDenied,
    IntentAbandon,
    Collision,
    ModeChange,
    CommandRejected,
    Warning,
}

impl EventType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::Stop => "stop",
            EventType::Resume => "resume",
            EventType::LaneChangeStart => "lane_change_start",
            EventType::LaneChangeComplete => "lane_change_complete",
            EventType::LaneChangeAbandon => "lane_change_abandon",
            EventType::LaneChangeDenied => "lane_change_denied",
            EventType::IntentAbandon => "intent_abandon",
            EventType::Collision => "collision",
            EventType::ModeChange => "mode_change",
            EventType::CommandRejected => "command_rejected",
            EventType::Warning => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub t: f64,
    pub kind: EventType,
    pub vehicle: Option<usize>,
    pub other: Option<usize>,
    pub lane: Option<LaneId>,
    pub detail: String,
}

impl SimEvent {
    pub fn new(tick: u64, t: f64, kind: EventType, vehicle: Option<usize>) -> Self {
        Self { tick, t, kind, vehicle, other: None, lane: None, detail: String::new() }
    }

    pub fn with_lane(mut self, lane: LaneId) -> Self {
        self.lane = Some(lane);
        self
    }

    pub fn with_other(mut self, other: usize) -> Self {
        self.other = Some(other);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub lane_lengths: Vec<f64>,
    /// Tick-major: all vehicles of a tick, by id, then the next tick.
    pub rows: Vec<RecordRow>,
    pub events: Vec<SimEvent>,
    /// Last simulated tick.
    pub ticks: u64,
    /// Stopped early on a collision.
    pub halted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneChangeCounts {
    pub started: usize,
    pub completed: usize,
    pub abandoned: usize,
    pub denied: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEntry {
    pub t: f64,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    pub simulated_time: f64,
    pub halted: bool,
    pub throughput: ThroughputResult,
    pub queue: QueueStats,
    pub lane_changes: LaneChangeCounts,
    pub intents_abandoned: usize,
    pub collisions: Vec<CollisionEntry>,
    pub config: ScenarioConfig,
}

impl RunRecord {
    pub fn end_time(&self) -> f64 {
        self.ticks as f64 * self.config.dt
    }

    fn tick_groups(&self) -> impl Iterator<Item = &[RecordRow]> {
        self.rows.chunk_by(|a, b| a.tick == b.tick)
    }

    /// Times at which any vehicle passed its lane's checkpoint.
    pub fn checkpoint_crossings(&self) -> Vec<f64> {
        let cps = &self.config.track.checkpoint_s;
        let n = self.config.vehicles.count;
        let mut last: Vec<Option<f64>> = vec![None; n];
        let mut out = Vec::new();
        for r in &self.rows {
            let len = self.lane_lengths[r.lane];
            let q = ((r.s - cps[r.lane]) / len).rem_euclid(1.0);
            if let Some(prev) = last[r.id] {
                if is_crossing(prev, q) {
                    out.push(r.t);
                }
            }
            last[r.id] = Some(q);
        }
        out
    }

    pub fn throughput(&self) -> ThroughputResult {
        let m = &self.config.metrics;
        throughput_from_crossings(&self.checkpoint_crossings(), self.end_time(), m.warmup, m.window, m.step)
    }

    /// Waiting vehicles (slower than the queue threshold and not scripted to
    /// stop) after the warmup period.
    pub fn queue_stats(&self) -> QueueStats {
        let m = &self.config.metrics;
        let dt = self.config.dt * self.config.engine.record_every as f64;
        let mut stats = QueueStats::default();
        for group in self.tick_groups() {
            if group[0].t < m.warmup - 1e-9 {
                continue;
            }
            let waiting = group.iter().filter(|r| r.v < m.queue_speed && !r.stopped).count();
            stats.max_queue = stats.max_queue.max(waiting);
            stats.waiting_vehicle_seconds += waiting as f64 * dt;
        }
        stats
    }

    pub fn count(&self, kind: EventType) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn collisions(&self) -> Vec<CollisionEntry> {
        self.events
            .iter()
            .filter(|e| e.kind == EventType::Collision)
            .map(|e| CollisionEntry { t: e.t, a: e.vehicle.unwrap_or_default(), b: e.other.unwrap_or_default() })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        Summary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            ticks: self.ticks,
            simulated_time: self.end_time(),
            halted: self.halted,
            throughput: self.throughput(),
            queue: self.queue_stats(),
            lane_changes: LaneChangeCounts {
                started: self.count(EventType::LaneChangeStart),
                completed: self.count(EventType::LaneChangeComplete),
                abandoned: self.count(EventType::LaneChangeAbandon),
                denied: self.count(EventType::LaneChangeDenied),
            },
            intents_abandoned: self.count(EventType::IntentAbandon),
            collisions: self.collisions(),
            config: self.config.clone(),
        }
    }

    /// One row per recorded vehicle-tick. Empty cells mean "not changing
    /// lanes".
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("tick,t,id,lane,s,x,y,theta,v,psi,lc_progress,lc_target,accel,stopped\n");
        for r in &self.rows {
            let prog = r.lc_progress.map(|p| p.to_string()).unwrap_or_default();
            let target = r.lc_target.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.tick,
                r.t,
                r.id,
                r.lane,
                r.s,
                r.x,
                r.y,
                r.theta,
                r.v,
                r.psi,
                prog,
                target,
                r.accel,
                u8::from(r.stopped)
            );
        }
        out
    }

    /// Space-time dataset: position along the track as a lap fraction
    /// measured from the checkpoint, plus speed.
    pub fn spacetime_csv(&self) -> String {
        let cps = &self.config.track.checkpoint_s;
        let mut out = String::from("t,id,lane,s,fraction,v\n");
        for r in &self.rows {
            let len = self.lane_lengths[r.lane];
            let fraction = ((r.s - cps[r.lane]) / len).rem_euclid(1.0);
            let _ = writeln!(out, "{},{},{},{},{},{}", r.t, r.id, r.lane, r.s, fraction, r.v);
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("tick,t,kind,vehicle,other,lane,detail\n");
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.tick,
                e.t,
                e.kind.as_str(),
                opt(e.vehicle),
                opt(e.other),
                opt(e.lane),
                e.detail.replace(',', ";")
            );
        }
        out
    }
}

/// Writes `trajectory.csv`, `spacetime.csv`, `events.csv`, `summary.json`
/// and `config.toml` into `dir`. Returns the written paths.
pub fn export_record(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.to_owned(), source })?;
    let summary = serde_json::to_string_pretty(&record.summary()).expect("summary serializes");
    let files = [
        ("trajectory.csv", record.trajectory_csv()),
        ("spacetime.csv", record.spacetime_csv()),
        ("events.csv", record.events_csv()),
        ("summary.json", summary + "\n"),
        ("config.toml", record.config.to_toml()),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|source| SimError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}
