//! Microscopic multi-lane traffic simulation for miniature cars.

pub mod config;
pub mod coordination;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod game;
pub mod idm;
pub mod lane_change;
pub mod metrics;
pub mod record;
pub mod sim;
pub mod track;
pub mod tracking;
