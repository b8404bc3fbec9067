//! Wire format: every message is one JSON text frame
//! `{"type": ..., "version": ..., "payload": ...}`.
//!
//! Server to client: `hello` once on connect, then `frame` at the session's
//! frame rate and `event` for messages addressed to that client only.
//! Client to server: `command` (payload is a [`Command`]) and an optional
//! `hello`. Anything else is ignored and answered with a warning event.

use minicar_core::game::{Command, Frame};
use minicar_core::record::SimEvent;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Outgoing<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'a str,
    version: u32,
    payload: &'a T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneInfo {
    pub id: usize,
    pub length: f64,
}

/// Session description sent to every client on connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub scenario: String,
    pub dt: f64,
    pub frame_rate: f64,
    pub vehicle_count: usize,
    /// Vehicles that accept commands.
    pub played: Vec<usize>,
    pub lanes: Vec<LaneInfo>,
    /// Path of the centerline endpoint.
    pub track: String,
}

fn encode<T: Serialize>(kind: &str, payload: &T) -> String {
    serde_json::to_string(&Outgoing { kind, version: PROTOCOL_VERSION, payload }).expect("message serializes")
}

pub fn encode_hello(hello: &Hello) -> String {
    encode("hello", hello)
}

pub fn encode_frame(frame: &Frame) -> String {
    encode("frame", frame)
}

pub fn encode_event(event: &SimEvent) -> String {
    encode("event", event)
}

pub fn encode_command(command: &Command) -> String {
    encode("command", command)
}

#[derive(Debug, Deserialize)]
struct RawIncoming {
    #[serde(rename = "type")]
    kind: String,
    version: Option<u32>,
    #[serde(default)]
    payload: serde_json::Value,
}

/// A decoded client message.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Hello,
    Command(Command),
    /// Not acted on; the reason goes back to the client as a warning.
    Ignored(String),
}

pub fn decode(text: &str) -> Incoming {
    let raw: RawIncoming = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return Incoming::Ignored(format!("malformed message: {e}")),
    };
    match raw.version {
        Some(PROTOCOL_VERSION) => {}
        Some(v) => return Incoming::Ignored(format!("unsupported protocol version {v}, expected {PROTOCOL_VERSION}")),
        None => return Incoming::Ignored("missing protocol version".into()),
    }
    match raw.kind.as_str() {
        "hello" => Incoming::Hello,
        "command" => match serde_json::from_value(raw.payload) {
            Ok(c) => Incoming::Command(c),
            Err(e) => Incoming::Ignored(format!("invalid command: {e}")),
        },
        other => Incoming::Ignored(format!("unknown message type `{other}`")),
    }
}
