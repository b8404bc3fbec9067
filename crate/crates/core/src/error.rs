use std::path::PathBuf;

use thiserror::Error;

use crate::track::LaneId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("a track needs at least two lanes, got {0}")]
    TooFewLanes(usize),
    #[error("infeasible track geometry: {0}")]
    Infeasible(String),
    #[error("lane {lane} does not close on itself")]
    NotClosed { lane: LaneId },
    #[error("lane {lane} has length {actual} m, target was {target} m")]
    LengthMismatch { lane: LaneId, target: f64, actual: f64 },
    #[error("vehicle lost: {distance:.3} m from lane {lane} centerline")]
    Lost { lane: LaneId, distance: f64 },
    #[error("no lane with id {0}")]
    NoSuchLane(LaneId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaneChangeError {
    #[error("lanes {from} and {to} are not adjacent")]
    NotAdjacent { from: LaneId, to: LaneId },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("bad override `{0}` (expected dotted.key=value)")]
    Override(String),
}

impl ConfigError {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_owned(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("vehicle {vehicle}: {source}")]
    Vehicle { vehicle: usize, source: TrackError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
