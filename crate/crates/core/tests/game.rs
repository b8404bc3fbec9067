use minicar_core::config::{EventKind, EventSpec, Policy, Preset, ScenarioConfig};
use minicar_core::game::{replay, Action, Command, ControlMode, Session, Side};
use minicar_core::record::EventType;
use minicar_core::sim::World;
use minicar_core::track::gap_along_lane;
use proptest::prelude::*;

fn played(count: usize, duration: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(Policy::Egocentric, Preset::Normal);
    c.vehicles.count = count;
    c.vehicles.gamified = vec![0];
    c.events.clear();
    c.duration = duration;
    c
}

fn set_mode(mode: ControlMode) -> Command {
    Command { vehicle: 0, action: Action::SetMode { mode } }
}

fn kinds(w: &World, kind: EventType) -> Vec<&minicar_core::record::SimEvent> {
    w.events.iter().filter(|e| e.kind == kind).collect()
}

#[test]
fn command_wire_shape() {
    let c: Command = serde_json::from_str(r#"{"vehicle":0,"action":"manual","throttle":0.5,"steer":-1.0}"#).unwrap();
    assert_eq!(c, Command { vehicle: 0, action: Action::Manual { throttle: 0.5, steer: -1.0 } });
    let c: Command = serde_json::from_str(r#"{"vehicle":2,"action":"semi_automatic","lane_change":"left"}"#).unwrap();
    assert_eq!(c.action, Action::SemiAutomatic { speed_setpoint: None, lane_change: Some(Side::Left) });
    let c: Command = serde_json::from_str(r#"{"vehicle":2,"action":"set_mode","mode":"semi_automatic"}"#).unwrap();
    assert_eq!(c.action, Action::SetMode { mode: ControlMode::SemiAutomatic });
    let text = serde_json::to_string(&Command { vehicle: 1, action: Action::Stop }).unwrap();
    assert_eq!(text, r#"{"vehicle":1,"action":"stop"}"#);
}

#[test]
fn automatic_mode_ignores_driving_input() {
    let mut w = World::new(played(4, 5.0)).unwrap();
    let mut reference = w.clone();
    w.queue_command(Command { vehicle: 0, action: Action::Manual { throttle: 1.0, steer: 1.0 } });
    w.step().unwrap();
    reference.step().unwrap();
    assert_eq!(w.agents[0].state, reference.agents[0].state);
    let rejected = kinds(&w, EventType::CommandRejected);
    assert_eq!(rejected.len(), 1);
    assert!(rejected[0].detail.contains("automatic"));
}

#[test]
fn commands_for_unplayed_vehicles_are_rejected() {
    let mut w = World::new(played(4, 5.0)).unwrap();
    w.queue_command(Command { vehicle: 2, action: Action::SetMode { mode: ControlMode::Manual } });
    w.queue_command(Command { vehicle: 40, action: Action::Stop });
    w.step().unwrap();
    let rejected = kinds(&w, EventType::CommandRejected);
    assert_eq!(rejected.len(), 2);
    assert!(rejected[0].detail.contains("not gamified"));
    assert!(rejected[1].detail.contains("no vehicle"));
    assert_eq!(w.agents[2].mode(), ControlMode::Automatic);
}

#[test]
fn out_of_range_input_is_clamped() {
    let mut w = World::new(played(2, 5.0)).unwrap();
    w.queue_command(set_mode(ControlMode::Manual));
    w.queue_command(Command { vehicle: 0, action: Action::Manual { throttle: 3.0, steer: -7.0 } });
    w.step().unwrap();
    let h = w.agents[0].human.as_ref().unwrap();
    assert_eq!((h.throttle, h.steer), (1.0, -1.0));
    assert!(kinds(&w, EventType::CommandRejected).is_empty());
}

#[test]
fn held_full_steer_saturates_through_the_rate_limit() {
    let c = played(2, 5.0);
    let lim = c.limits;
    let mut w = World::new(c).unwrap();
    w.queue_command(set_mode(ControlMode::Manual));
    w.queue_command(Command { vehicle: 0, action: Action::Manual { throttle: 0.3, steer: 1.0 } });
    let mut prev = w.agents[0].state.psi;
    for _ in 0..100 {
        w.step().unwrap();
        let psi = w.agents[0].state.psi;
        assert!(psi - prev <= lim.max_steer_rate * w.config.dt + 1e-12);
        assert!(psi <= lim.max_steer + 1e-12);
        prev = psi;
    }
    assert!((prev - lim.max_steer).abs() < 1e-12);
}

#[test]
fn semi_automatic_setpoint_cannot_override_gap_keeping() {
    let mut c = played(16, 40.0);
    // Vehicle 1 is the next car ahead of vehicle 0 on the inner lane.
    c.events = vec![EventSpec { time: 0.0, kind: EventKind::Stop, vehicle: 1 }];
    let body = c.limits.body_length;
    let mut w = World::new(c).unwrap();
    w.queue_command(set_mode(ControlMode::SemiAutomatic));
    w.step().unwrap();
    w.queue_command(Command {
        vehicle: 0,
        action: Action::SemiAutomatic { speed_setpoint: Some(1.2), lane_change: None },
    });
    let len = w.track.lanes[0].length;
    let mut top: f64 = 0.0;
    while !w.is_finished() {
        w.step().unwrap();
        top = top.max(w.agents[0].state.v);
        let gap = gap_along_lane(w.agents[0].state.s, w.agents[1].state.s, len, body);
        assert!(gap > 0.1, "gap {gap} at t={}", w.time());
    }
    assert!(top < 0.6, "played car reached {top}");
    assert!(w.agents[0].state.v < 0.01);
    assert!(kinds(&w, EventType::Collision).is_empty());
}

#[test]
fn semi_automatic_safe_request_changes_lane() {
    let mut w = World::new(played(2, 20.0)).unwrap();
    w.queue_command(set_mode(ControlMode::SemiAutomatic));
    for _ in 0..300 {
        w.step().unwrap();
    }
    w.queue_command(Command {
        vehicle: 0,
        action: Action::SemiAutomatic { speed_setpoint: None, lane_change: Some(Side::Right) },
    });
    while !w.is_finished() {
        w.step().unwrap();
    }
    assert_eq!(kinds(&w, EventType::LaneChangeStart).len(), 1);
    assert_eq!(kinds(&w, EventType::LaneChangeComplete).len(), 1);
    assert_eq!(w.agents[0].state.lane, 1);
}

#[test]
fn semi_automatic_request_without_a_lane_is_denied() {
    let mut w = World::new(played(2, 5.0)).unwrap();
    w.queue_command(set_mode(ControlMode::SemiAutomatic));
    w.queue_command(Command {
        vehicle: 0,
        action: Action::SemiAutomatic { speed_setpoint: None, lane_change: Some(Side::Left) },
    });
    w.step().unwrap();
    let denied = kinds(&w, EventType::LaneChangeDenied);
    assert_eq!(denied.len(), 1);
    assert_eq!(denied[0].detail, "no lane on that side");
}

#[test]
fn semi_automatic_unsafe_request_is_denied() {
    let mut w = World::new(played(16, 60.0)).unwrap();
    w.queue_command(set_mode(ControlMode::SemiAutomatic));
    // Wait until an outer-lane car is level with the played car.
    loop {
        w.step().unwrap();
        let snap = w.snapshot();
        let me = snap[0].s_on_or_project(1, &w.track);
        let len = w.track.lanes[1].length;
        let level = snap.iter().filter(|o| o.lane == 1).any(|o| {
            let d = (o.s_on(1).unwrap() - me).rem_euclid(len);
            d.min(len - d) < 0.15
        });
        if level && w.time() > 3.0 {
            break;
        }
        assert!(!w.is_finished());
    }
    w.queue_command(Command {
        vehicle: 0,
        action: Action::SemiAutomatic { speed_setpoint: None, lane_change: Some(Side::Right) },
    });
    w.step().unwrap();
    let denied = kinds(&w, EventType::LaneChangeDenied);
    assert_eq!(denied.len(), 1, "{:?}", w.events);
    assert_eq!(denied[0].lane, Some(1));
    assert!(kinds(&w, EventType::LaneChangeStart).is_empty());
    assert_eq!(w.agents[0].state.lane, 0);
}

#[test]
fn request_is_denied_without_room_before_a_stopped_car() {
    let mut c = played(16, 30.0);
    // Vehicle 8 leads the outer lane, just ahead of the played car.
    c.events = vec![EventSpec { time: 0.0, kind: EventKind::Stop, vehicle: 8 }];
    let body = c.limits.body_length;
    let mut w = World::new(c).unwrap();
    w.queue_command(set_mode(ControlMode::SemiAutomatic));
    let len = w.track.lanes[1].length;
    loop {
        w.step().unwrap();
        let snap = w.snapshot();
        let gap = gap_along_lane(snap[0].s_on_or_project(1, &w.track), snap[8].s_on(1).unwrap(), len, body);
        if (0.45..0.8).contains(&gap) {
            break;
        }
        assert!(!w.is_finished());
    }
    w.queue_command(Command {
        vehicle: 0,
        action: Action::SemiAutomatic { speed_setpoint: None, lane_change: Some(Side::Right) },
    });
    w.step().unwrap();
    let denied = kinds(&w, EventType::LaneChangeDenied);
    assert_eq!(denied.len(), 1, "{:?}", w.events);
    assert_eq!(denied[0].detail, "no room to complete the change");
}

#[test]
fn switching_back_to_automatic_recovers_the_lane() {
    let mut w = World::new(played(2, 40.0)).unwrap();
    w.queue_command(set_mode(ControlMode::Manual));
    w.queue_command(Command { vehicle: 0, action: Action::Manual { throttle: 0.3, steer: 0.6 } });
    for _ in 0..150 {
        w.step().unwrap();
    }
    assert!(w.agents[0].state.lateral.abs() > 0.03);
    w.queue_command(set_mode(ControlMode::Automatic));
    while !w.is_finished() {
        w.step().unwrap();
    }
    assert!(w.agents[0].state.lateral.abs() < 0.01, "lateral {}", w.agents[0].state.lateral);
    assert_eq!(kinds(&w, EventType::ModeChange).len(), 2);
}

#[test]
fn frames_follow_the_configured_rate() {
    let mut s = Session::new(played(16, 2.0)).unwrap();
    let mut frames = Vec::new();
    while !s.is_finished() {
        if let Some(f) = s.step().unwrap() {
            frames.push(f);
        }
    }
    assert_eq!(frames.len(), 60);
    assert!(frames.windows(2).all(|w| w[0].tick < w[1].tick));
    assert!(frames.iter().all(|f| f.vehicles.len() == 16));
    assert!(frames.iter().all(|f| f.vehicles.iter().filter(|v| v.is_played).count() == 1));
}

#[test]
fn frame_events_are_delivered_once() {
    let mut s = Session::new(played(4, 2.0)).unwrap();
    s.submit(Command { vehicle: 3, action: Action::Stop });
    let mut seen = Vec::new();
    while !s.is_finished() {
        if let Some(f) = s.step().unwrap() {
            seen.extend(f.events);
        }
    }
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].kind, EventType::CommandRejected);
}

#[test]
fn released_vehicle_returns_to_automatic() {
    let mut s = Session::new(played(4, 2.0)).unwrap();
    s.submit(set_mode(ControlMode::Manual));
    s.step().unwrap();
    assert_eq!(s.world.agents[0].mode(), ControlMode::Manual);
    s.release(0);
    s.step().unwrap();
    assert_eq!(s.world.agents[0].mode(), ControlMode::Automatic);
}

#[test]
fn command_log_replays_byte_identically() {
    let mut c = ScenarioConfig::preset(Policy::Cooperative, Preset::Normal);
    c.vehicles.gamified = vec![0, 5];
    c.duration = 45.0;
    let script: Vec<(u64, Command)> = vec![
        (10, set_mode(ControlMode::Manual)),
        (10, Command { vehicle: 0, action: Action::Manual { throttle: 0.4, steer: 0.1 } }),
        (200, Command { vehicle: 0, action: Action::Manual { throttle: 0.2, steer: -0.2 } }),
        (450, set_mode(ControlMode::SemiAutomatic)),
        (
            451,
            Command {
                vehicle: 0,
                action: Action::SemiAutomatic { speed_setpoint: Some(0.3), lane_change: Some(Side::Right) },
            },
        ),
        (900, Command { vehicle: 5, action: Action::Stop }),
        (1500, Command { vehicle: 5, action: Action::Resume }),
        (1700, Command { vehicle: 3, action: Action::Stop }),
        (2500, set_mode(ControlMode::Automatic)),
    ];
    let mut s = Session::new(c.clone()).unwrap();
    let mut next = 0;
    while !s.is_finished() {
        while let Some((_, cmd)) = script.get(next).filter(|(t, _)| *t <= s.world.tick) {
            s.submit(*cmd);
            next += 1;
        }
        s.step().unwrap();
    }
    let log = s.command_log().to_vec();
    assert_eq!(log.len(), script.len());
    let live = s.into_record();
    let replayed = replay(c, &log).unwrap();
    assert!(live.trajectory_csv() == replayed.trajectory_csv());
    assert!(live.events_csv() == replayed.events_csv());
    assert!(live.events.iter().any(|e| e.kind == EventType::CommandRejected));
}

#[derive(Debug, Clone)]
enum Input {
    Mode(u8),
    Drive(f64, f64),
    Semi(f64, Option<bool>),
}

fn input() -> impl Strategy<Value = Input> {
    prop_oneof![
        (0u8..3).prop_map(Input::Mode),
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| Input::Drive(a, b)),
        (-1.0f64..3.0, proptest::option::of(any::<bool>())).prop_map(|(a, b)| Input::Semi(a, b)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn human_input_never_breaks_actuator_limits(stream in proptest::collection::vec((1u64..40, input()), 1..25)) {
        let c = played(4, 30.0);
        let lim = c.limits;
        let dt = c.dt;
        let mut w = World::new(c).unwrap();
        let mut prev_psi = w.agents[0].state.psi;
        for (hold, inp) in stream {
            let action = match inp {
                Input::Mode(m) => Action::SetMode { mode: [ControlMode::Manual, ControlMode::SemiAutomatic, ControlMode::Automatic][m as usize] },
                Input::Drive(t, s) => Action::Manual { throttle: t, steer: s },
                Input::Semi(sp, lc) => Action::SemiAutomatic { speed_setpoint: Some(sp), lane_change: lc.map(|r| if r { Side::Right } else { Side::Left }) },
            };
            w.queue_command(Command { vehicle: 0, action });
            for _ in 0..hold {
                if w.is_finished() { break; }
                w.step().unwrap();
                let st = w.agents[0].state;
                prop_assert!(st.psi.abs() <= lim.max_steer + 1e-12);
                prop_assert!((st.psi - prev_psi).abs() <= lim.max_steer_rate * dt + 1e-12);
                prop_assert!(st.v >= 0.0 && st.v <= lim.max_speed + 1e-12);
                prev_psi = st.psi;
            }
        }
    }
}
