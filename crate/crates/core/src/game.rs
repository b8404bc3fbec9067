//! Human-in-the-loop control: command types, frame snapshots, and a session
//! wrapper that logs every command so a run can be replayed exactly.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::record::{RunRecord, SimEvent};
use crate::sim::World;
use crate::track::LaneId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Manual,
    SemiAutomatic,
    #[default]
    Automatic,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::Manual => "manual",
            ControlMode::SemiAutomatic => "semi_automatic",
            ControlMode::Automatic => "automatic",
        }
    }
}

/// Left is toward the inner lane (lower id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Throttle in [0, 1] scales the top speed (negative values coast to a
    /// stop); steer in [-1, 1] scales the steering limit.
    Manual {
        throttle: f64,
        steer: f64,
    },
    SemiAutomatic {
        #[serde(default)]
        speed_setpoint: Option<f64>,
        #[serde(default)]
        lane_change: Option<Side>,
    },
    SetMode {
        mode: ControlMode,
    },
    Stop,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub vehicle: usize,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub tick: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVehicle {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub psi: f64,
    pub lane: LaneId,
    pub lane_change_progress: Option<f64>,
    pub is_played: bool,
    pub mode: ControlMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub t: f64,
    pub vehicles: Vec<FrameVehicle>,
    /// Events raised since the previous frame.
    pub events: Vec<SimEvent>,
}

pub fn frame_of(world: &World, events: Vec<SimEvent>) -> Frame {
    Frame {
        tick: world.tick,
        t: world.time(),
        vehicles: world
            .agents
            .iter()
            .map(|a| FrameVehicle {
                id: a.id,
                x: a.state.x,
                y: a.state.y,
                theta: a.state.theta,
                v: a.state.v,
                psi: a.state.psi,
                lane: a.state.lane,
                lane_change_progress: a.state.lane_change.map(|lc| lc.progress),
                is_played: a.is_played(),
                mode: a.mode(),
            })
            .collect(),
        events,
    }
}

/// A running world plus frame decimation. Commands submitted between ticks
/// take effect at the start of the next tick.
#[derive(Debug, Clone)]
pub struct Session {
    pub world: World,
    frame_rate: f64,
    events_sent: usize,
}

impl Session {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        let frame_rate = config.game.frame_rate;
        Ok(Self { world: World::new(config)?, frame_rate, events_sent: 0 })
    }

    pub fn submit(&mut self, command: Command) {
        self.world.queue_command(command);
    }

    /// Hands a played vehicle back to automatic control.
    pub fn release(&mut self, vehicle: usize) {
        self.submit(Command { vehicle, action: Action::SetMode { mode: ControlMode::Automatic } });
    }

    fn frame_index(&self, tick: u64) -> u64 {
        (tick as f64 * self.world.config.dt * self.frame_rate + 1e-9).floor() as u64
    }

    /// Current state as a frame carrying all events not yet delivered.
    pub fn frame(&mut self) -> Frame {
        let events = self.world.events[self.events_sent..].to_vec();
        self.events_sent = self.world.events.len();
        frame_of(&self.world, events)
    }

    /// Advances one tick. Returns a frame when the tick crosses a frame
    /// boundary at the configured frame rate.
    pub fn step(&mut self) -> Result<Option<Frame>, SimError> {
        let before = self.frame_index(self.world.tick);
        self.world.step()?;
        Ok((self.frame_index(self.world.tick) != before).then(|| self.frame()))
    }

    pub fn is_finished(&self) -> bool {
        self.world.is_finished()
    }

    pub fn command_log(&self) -> &[LoggedCommand] {
        self.world.command_log()
    }

    pub fn into_record(self) -> RunRecord {
        self.world.into_record()
    }
}

/// Re-runs a session from its configuration and command log.
pub fn replay(config: ScenarioConfig, log: &[LoggedCommand]) -> Result<RunRecord, SimError> {
    let mut world = World::new(config)?;
    let mut next = 0;
    while !world.is_finished() {
        while let Some(entry) = log.get(next).filter(|e| e.tick <= world.tick) {
            world.queue_command(entry.command);
            next += 1;
        }
        world.step()?;
    }
    Ok(world.into_record())
}
