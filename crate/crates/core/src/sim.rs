//! Tick engine. Each tick runs four phases over the whole fleet: sense,
//! plan, control, integrate. Planning reads a snapshot taken after sensing,
//! so no vehicle sees another's update from the same tick.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EventKind, LaneChangeConfig, Policy, ScenarioConfig};
use crate::coordination::{
    build_neighbor_view, project_intent, urgency_weight, LaneNeighbors, SnapshotVehicle, VirtualVehicle,
};
use crate::dynamics::{step_kinematics, LaneChange, VehicleState};
use crate::error::SimError;
use crate::estimation::{ekf_predict, ekf_update, emulate_measurement, EstimatorState, SensingMode};
use crate::game::{Action, Command, ControlMode, LoggedCommand, Side};
use crate::idm::{effective_jam_distance, idm_acceleration, FrontTarget, IdmParams};
use crate::lane_change::{
    assess_candidate, evaluate_lane_change, Blocker, CandidateLane, LaneChangeContext, LaneChangePath, MobilParams,
    Neighbor,
};
use crate::metrics::detect_collisions;
use crate::record::{EventType, RecordRow, RunRecord, SimEvent};
use crate::track::{build_track, gap_along_lane, LaneId, Track};
use crate::tracking::{track_path, velocity_pid, PidState};

/// Smallest gap handed to the IDM; overlaps are reported as collisions.
const MIN_GAP: f64 = 1e-3;
/// Extra sideways margin before a changing vehicle stops following the
/// leader on the lane it is leaving.
const LATERAL_CLEARANCE_MARGIN: f64 = 0.01;
/// Jam distance kept to that leader until the nose has moved clear of it.
const CHANGE_JAM_DISTANCE: f64 = 0.02;

/// Progress below which a stalled lane change can still be called off; past
/// it the car already straddles both lanes and has to finish.
const ABANDON_PROGRESS: f64 = 0.05;

/// Pose and motion as the controllers see them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perceived {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HumanControl {
    pub mode: ControlMode,
    pub throttle: f64,
    pub steer: f64,
    pub speed_setpoint: Option<f64>,
    pub lane_request: Option<Side>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Intent {
    target: LaneId,
    created: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub state: VehicleState,
    pub estimate: EstimatorState,
    pub perceived: Perceived,
    pub policy: Policy,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub v_set: f64,
    /// Last planned longitudinal acceleration.
    pub accel: f64,
    pub stopped: bool,
    pub human: Option<HumanControl>,
    pid: PidState,
    cmd_v: f64,
    cmd_psi: f64,
    sense_rng: ChaCha8Rng,
    comm_rng: ChaCha8Rng,
    cooldown_until: f64,
    intent_block_until: f64,
    intent: Option<Intent>,
    change_started: f64,
    visible: Vec<VirtualVehicle>,
}

impl Agent {
    pub fn mode(&self) -> ControlMode {
        self.human.as_ref().map_or(ControlMode::Automatic, |h| h.mode)
    }

    pub fn is_played(&self) -> bool {
        self.human.is_some()
    }

    /// Target lane of the pending or executing intent.
    pub fn intent_target(&self) -> Option<LaneId> {
        self.intent.map(|i| i.target)
    }
}

/// Output of the plan phase for one vehicle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub accel: f64,
    /// Lane change to begin this tick.
    pub start: Option<LaneId>,
    /// Lane whose incentive passed, whether or not the change is allowed.
    pub desire: Option<LaneId>,
    /// Gap to the real leader on the current lane.
    pub front_gap: Option<f64>,
    pub denied: Option<(LaneId, String)>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: ScenarioConfig,
    pub track: Track,
    pub agents: Vec<Agent>,
    pub tick: u64,
    /// Intents broadcast at the end of the latest plan phase.
    pub registry: Vec<VirtualVehicle>,
    pub events: Vec<SimEvent>,
    pub halted: bool,
    history: VecDeque<Vec<VirtualVehicle>>,
    next_event: usize,
    commands: Vec<Command>,
    applied: Vec<LoggedCommand>,
    colliding: BTreeSet<(usize, usize)>,
    rows: Vec<RecordRow>,
}

/// Vehicles per lane for an even split, inner lanes taking the remainder.
pub fn even_split(count: usize, lanes: usize) -> Vec<usize> {
    (0..lanes).map(|l| count / lanes + usize::from(l < count % lanes)).collect()
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let track = build_track(&config.track)?;
        let mut agents = Vec::with_capacity(config.vehicles.count);
        let split = even_split(config.vehicles.count, track.lanes.len());
        for (lane, &n) in split.iter().enumerate() {
            let len = track.lanes[lane].length;
            for k in 0..n {
                let s = (k as f64 + lane as f64 * config.vehicles.stagger) * len / n as f64;
                let id = agents.len();
                let state = VehicleState::on_lane(&track, lane, s, config.vehicles.initial_speed)?;
                agents.push(Self::make_agent(&config, id, state));
            }
        }
        let mut world = Self {
            track,
            agents,
            tick: 0,
            registry: Vec::new(),
            events: Vec::new(),
            halted: false,
            history: VecDeque::new(),
            next_event: 0,
            commands: Vec::new(),
            applied: Vec::new(),
            colliding: BTreeSet::new(),
            rows: Vec::new(),
            config,
        };
        world.record_rows();
        Ok(world)
    }

    fn make_agent(config: &ScenarioConfig, id: usize, state: VehicleState) -> Agent {
        let mut sense_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sense_rng.set_stream(2 * id as u64);
        let mut comm_rng = ChaCha8Rng::seed_from_u64(config.seed);
        comm_rng.set_stream(2 * id as u64 + 1);
        let s = &config.sensing;
        let estimate = EstimatorState::from_state(&state, [s.r[0], s.r[1], s.r[2], s.q[3], s.q[4]]);
        Agent {
            id,
            perceived: Perceived { x: state.x, y: state.y, theta: state.theta, v: state.v, psi: state.psi },
            estimate,
            state,
            policy: config.vehicles.policy,
            idm: config.idm,
            mobil: MobilParams { cooperative: config.vehicles.policy == Policy::Cooperative, ..config.mobil },
            v_set: state.v,
            accel: 0.0,
            stopped: false,
            human: config.vehicles.gamified.contains(&id).then(HumanControl::default),
            pid: PidState::default(),
            cmd_v: state.v,
            cmd_psi: 0.0,
            sense_rng,
            comm_rng,
            cooldown_until: 0.0,
            intent_block_until: 0.0,
            intent: None,
            change_started: 0.0,
            visible: Vec::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn states(&self) -> Vec<VehicleState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.halted || self.tick >= self.config.ticks()
    }

    /// Queues a command for the next tick boundary.
    pub fn queue_command(&mut self, command: Command) {
        self.commands.push(command);
    }

    /// Commands applied so far, with the tick they took effect on.
    pub fn command_log(&self) -> &[LoggedCommand] {
        &self.applied
    }

    pub fn push_event(&mut self, event: SimEvent) {
        self.events.push(event);
    }

    fn event(&self, kind: EventType, vehicle: Option<usize>) -> SimEvent {
        SimEvent::new(self.tick, self.time(), kind, vehicle)
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        if self.halted {
            return Ok(());
        }
        self.apply_scripted_events();
        self.apply_commands();
        self.sense();
        if self.tick.is_multiple_of(u64::from(self.config.engine.planner_divider)) {
            let snapshot = self.snapshot();
            let plans = self.plan_all(&snapshot);
            self.commit_plans(&snapshot, &plans);
        }
        self.control()?;
        self.integrate()?;
        Ok(())
    }

    fn apply_scripted_events(&mut self) {
        let t = self.time();
        while let Some(e) = self.config.events.get(self.next_event).copied() {
            if e.time > t + 0.5 * self.config.dt {
                break;
            }
            self.next_event += 1;
            match e.kind {
                EventKind::Stop => self.stop_vehicle(e.vehicle),
                EventKind::Resume => self.resume_vehicle(e.vehicle),
            }
        }
    }

    fn stop_vehicle(&mut self, id: usize) {
        let agent = &mut self.agents[id];
        agent.stopped = true;
        agent.intent = None;
        let ev = self.event(EventType::Stop, Some(id));
        self.events.push(ev);
    }

    fn resume_vehicle(&mut self, id: usize) {
        let agent = &mut self.agents[id];
        agent.stopped = false;
        agent.v_set = agent.perceived.v.max(0.0);
        agent.pid.reset();
        let ev = self.event(EventType::Resume, Some(id));
        self.events.push(ev);
    }

    fn apply_commands(&mut self) {
        let commands = std::mem::take(&mut self.commands);
        for command in commands {
            self.applied.push(LoggedCommand { tick: self.tick, command });
            if let Err(reason) = self.apply_command(&command) {
                let ev = self.event(EventType::CommandRejected, Some(command.vehicle)).with_detail(reason);
                self.events.push(ev);
            }
        }
    }

    fn apply_command(&mut self, command: &Command) -> Result<(), String> {
        let id = command.vehicle;
        let max_speed = self.config.limits.max_speed;
        let agent = self.agents.get_mut(id).ok_or_else(|| format!("no vehicle {id}"))?;
        let human = agent.human.as_mut().ok_or_else(|| format!("vehicle {id} is not gamified"))?;
        match command.action {
            Action::SetMode { mode } => {
                if mode == human.mode {
                    return Ok(());
                }
                let was_manual = human.mode == ControlMode::Manual;
                human.mode = mode;
                human.lane_request = None;
                agent.v_set = agent.perceived.v.max(0.0);
                agent.pid.reset();
                if mode == ControlMode::Manual {
                    agent.intent = None;
                    if let Some(lc) = agent.state.lane_change.take() {
                        let ev = self
                            .event(EventType::LaneChangeAbandon, Some(id))
                            .with_lane(lc.to)
                            .with_detail("manual override");
                        self.events.push(ev);
                    }
                }
                let detail = match (was_manual, mode) {
                    (_, ControlMode::Manual) => "manual",
                    (_, ControlMode::SemiAutomatic) => "semi_automatic",
                    (_, ControlMode::Automatic) => "automatic",
                };
                let ev = self.event(EventType::ModeChange, Some(id)).with_detail(detail);
                self.events.push(ev);
            }
            Action::Manual { throttle, steer } => {
                if human.mode != ControlMode::Manual {
                    return Err(format!("manual input ignored in {} mode", human.mode.as_str()));
                }
                if !(throttle.is_finite() && steer.is_finite()) {
                    return Err("non-finite manual input".into());
                }
                human.throttle = throttle.clamp(-1.0, 1.0);
                human.steer = steer.clamp(-1.0, 1.0);
            }
            Action::SemiAutomatic { speed_setpoint, lane_change } => {
                if human.mode != ControlMode::SemiAutomatic {
                    return Err(format!("semi-automatic input ignored in {} mode", human.mode.as_str()));
                }
                if let Some(sp) = speed_setpoint {
                    if !sp.is_finite() {
                        return Err("non-finite speed setpoint".into());
                    }
                    human.speed_setpoint = Some(sp.clamp(0.0, max_speed));
                }
                if lane_change.is_some() {
                    human.lane_request = lane_change;
                }
            }
            Action::Stop => self.stop_vehicle(id),
            Action::Resume => self.resume_vehicle(id),
        }
        Ok(())
    }

    fn for_each_agent<F>(&mut self, f: F)
    where
        F: Fn(&mut Agent) + Sync + Send,
    {
        if self.config.engine.parallel {
            self.agents.par_iter_mut().for_each(f);
        } else {
            self.agents.iter_mut().for_each(f);
        }
    }

    /// Phase 1: pose measurements, filtering, and intent reception.
    fn sense(&mut self) {
        let cfg = &self.config;
        let predict = self.tick > 0;
        let (q, r) = (cfg.sensing.process_noise(), cfg.sensing.measurement_noise());
        let latency = cfg.coop.latency_ticks as usize;
        let heard: Vec<VirtualVehicle> = self.history.get(latency).cloned().unwrap_or_default();
        let drop = cfg.coop.drop_probability;
        let (dt, wheelbase, t, sensing) = (cfg.dt, cfg.limits.wheelbase, self.time(), cfg.sensing);
        self.for_each_agent(|a| {
            a.perceived = match sensing.mode {
                SensingMode::Oracle => {
                    let s = &a.state;
                    Perceived { x: s.x, y: s.y, theta: s.theta, v: s.v, psi: s.psi }
                }
                SensingMode::Estimated => {
                    if predict {
                        a.estimate = ekf_predict(&a.estimate, dt, wheelbase, &q);
                    }
                    let m =
                        emulate_measurement(a.id, t, &a.state, sensing.sigma_xy, sensing.sigma_theta, &mut a.sense_rng);
                    a.estimate = ekf_update(&a.estimate, &m, &r);
                    let e = &a.estimate;
                    Perceived { x: e.x(), y: e.y(), theta: e.theta(), v: e.v(), psi: e.psi() }
                }
            };
            a.visible.clear();
            for vv in &heard {
                if vv.owner == a.id {
                    continue;
                }
                if drop > 0.0 && a.comm_rng.random::<f64>() < drop {
                    continue;
                }
                a.visible.push(*vv);
            }
        });
    }

    /// Fleet as perceived after the sense phase.
    pub fn snapshot(&self) -> Vec<SnapshotVehicle> {
        self.agents
            .iter()
            .map(|a| {
                let p = a.perceived;
                let positions =
                    a.state.occupied_lanes().map(|l| (l, self.track.lanes[l].closest(p.x, p.y).s_d)).collect();
                SnapshotVehicle {
                    id: a.id,
                    x: p.x,
                    y: p.y,
                    v: p.v.max(0.0),
                    lane: a.state.lane,
                    lane_change: a.state.lane_change,
                    positions,
                }
            })
            .collect()
    }

    pub fn plan_all(&self, snapshot: &[SnapshotVehicle]) -> Vec<Plan> {
        if self.config.engine.parallel {
            (0..self.agents.len()).into_par_iter().map(|i| self.plan(i, snapshot)).collect()
        } else {
            (0..self.agents.len()).map(|i| self.plan(i, snapshot)).collect()
        }
    }

    /// Phase 2 for one vehicle: a pure function of the snapshot and the
    /// vehicle's own controller state.
    pub fn plan(&self, i: usize, snapshot: &[SnapshotVehicle]) -> Plan {
        let cfg = &self.config;
        let lim = &cfg.limits;
        let agent = &self.agents[i];
        let mode = agent.mode();
        if agent.stopped || mode == ControlMode::Manual {
            return Plan::default();
        }
        let me = &snapshot[i];
        let v = me.v;
        let lane = agent.state.lane;
        let n_lanes = self.track.lanes.len();
        let lanes: Vec<LaneId> = match agent.state.lane_change {
            Some(lc) => vec![lc.from, lc.to],
            None => (lane.saturating_sub(1)..=(lane + 1).min(n_lanes - 1)).collect(),
        };
        let coop = agent.policy == Policy::Cooperative;
        let virtuals: &[VirtualVehicle] = if coop { &agent.visible } else { &[] };
        let view = build_neighbor_view(i, snapshot, virtuals, &lanes, &self.track, cfg.coop.c, lim.body_length);
        let own = view.lane(lane).expect("own lane in view");

        let mut base = agent.idm;
        if mode == ControlMode::SemiAutomatic {
            if let Some(sp) = agent.human.as_ref().and_then(|h| h.speed_setpoint) {
                base.v0 = sp.max(1e-3);
            }
        }
        let jam = |front_speed: f64| effective_jam_distance(&base, front_speed, lim.wheelbase);
        // A virtual leader is only yielded to when the ego can stop at least
        // s0 behind it at comfortable braking; one that is too close or
        // already alongside is passed instead.
        let relevant = agent.state.lane_change.map_or(lane, |lc| lc.to);
        let relevant_view = view.lane(relevant).expect("relevant lane in view");
        let (virtual_front, passing) = match relevant_view.virtual_front {
            Some(vf) if coop && agent.state.lane_change.is_none() => {
                let closing = (v - vf.speed).max(0.0);
                if vf.gap > base.s0 && vf.gap - base.s0 >= closing * closing / (2.0 * base.beta) {
                    (Some(vf), None)
                } else {
                    (None, Some(vf))
                }
            }
            _ => (None, None),
        };
        let mut idm = base;
        if coop {
            let boost = match (relevant_view.virtual_rear.filter(|vr| vr.gap < cfg.coop.c), passing) {
                (_, Some(vf)) => Some((vf.weight, 0.0)),
                (Some(vr), None) => Some((vr.weight, vr.gap.max(0.0))),
                (None, None) => None,
            };
            if let Some((weight, trail)) = boost {
                idm.v0 = crate::idm::boosted_desired_speed(base.v0, weight, trail, cfg.coop.c, lim.max_speed);
            }
        }
        let follow = |ln: &LaneNeighbors, escape: bool| match ln.front {
            Some(f) => {
                let target = FrontTarget::real(f.gap.max(MIN_GAP), v, f.speed);
                let s0 = if escape { jam(f.speed) } else { CHANGE_JAM_DISTANCE };
                idm_acceleration(v, Some(&target), &idm, s0, lim.max_decel)
            }
            None => idm_acceleration(v, None, &idm, idm.s0, lim.max_decel),
        };
        let virtual_accel = virtual_front.map(|vf| {
            let target = FrontTarget::virtual_vehicle(vf.gap.max(MIN_GAP), v, vf.speed, vf.weight);
            vf.weight * idm_acceleration(v, Some(&target), &idm, jam(vf.speed), lim.max_decel)
        });

        let mut accel = match agent.state.lane_change {
            None => follow(own, true),
            Some(lc) => {
                let to = view.lane(lc.to).expect("target lane in view");
                let mut a = follow(to, true);
                let reach = 0.5 * (lim.wheelbase + lim.body_length);
                let nose = self.track.lanes[lc.from]
                    .closest(me.x + reach * agent.perceived.theta.cos(), me.y + reach * agent.perceived.theta.sin());
                if nose.lateral_error.abs() < lim.body_width + LATERAL_CLEARANCE_MARGIN {
                    a = a.min(follow(own, false));
                }
                a
            }
        };
        if let Some(av) = virtual_accel {
            accel = accel.min(av);
        }
        let mut plan = Plan { accel, front_gap: own.front.map(|f| f.gap), ..Plan::default() };
        if agent.state.lane_change.is_some() {
            return plan;
        }
        // A disabled vehicle behind will not move, so neither its comfort nor
        // its braking enters the decision; only an actual overlap does.
        let moving_rear = |r: Option<Neighbor>| r.filter(|r| r.gap <= 0.0 || !self.agents[r.id].stopped);
        // Cooperative drivers treat a promised slot as taken: a virtual
        // vehicle closer than the real leader becomes the new leader.
        let candidate = |l: LaneId| {
            let ln = view.lane(l).expect("adjacent lane in view");
            let promised =
                ln.virtual_front.filter(|_| coop).map(|vf| Neighbor { id: vf.owner, gap: vf.gap, speed: vf.speed });
            let new_front = match (ln.front, promised) {
                (Some(f), Some(p)) if p.gap < f.gap => Some(p),
                (None, p) => p,
                (f, _) => f,
            };
            let announced = match agent.intent {
                Some(intent) if coop && intent.target == l => {
                    own.front.map_or(0.0, |f| urgency_weight(f.gap, cfg.coop.c, cfg.coop.kappa_u))
                }
                _ => 0.0,
            };
            CandidateLane { lane: l, new_front, new_rear: moving_rear(ln.rear), announced }
        };
        // The escape guard applied at the end of the manoeuvre: after covering
        // the change distance the ego must still be clear of its new leader.
        let distance = change_distance(v, &agent.mobil, &cfg.lane_change);
        // Every vehicle ahead within reach counts, not only the nearest: a
        // leader about to leave the lane can hide a stopped one behind it.
        let has_room = |l: LaneId| {
            let target = &self.track.lanes[l];
            let ego_s = me.s_on_or_project(l, &self.track);
            let duration = distance / v.max(1e-3);
            let reach = distance + jam(0.0);
            snapshot.iter().filter(|o| o.id != i).all(|o| {
                let Some(s) = o.s_on(l) else { return true };
                let gap = gap_along_lane(ego_s, s, target.length, lim.body_length);
                gap <= 0.0 || gap > reach || gap + o.v * duration - distance >= jam(o.v)
            })
        };
        let adjacent: Vec<LaneId> = lanes.iter().copied().filter(|&l| l != lane).collect();
        let ctx = LaneChangeContext {
            ego_speed: v,
            current_front: own.front,
            old_rear: moving_rear(own.rear),
            candidates: adjacent.iter().map(|&l| candidate(l)).collect(),
        };
        match mode {
            ControlMode::SemiAutomatic => {
                let Some(side) = agent.human.as_ref().and_then(|h| h.lane_request) else {
                    return plan;
                };
                let target = match side {
                    Side::Left => lane.checked_sub(1),
                    Side::Right => (lane + 1 < n_lanes).then_some(lane + 1),
                };
                let Some(target) = target else {
                    plan.denied = Some((lane, "no lane on that side".into()));
                    return plan;
                };
                let ctx = LaneChangeContext { candidates: vec![candidate(target)], ..ctx };
                let assessment = assess_candidate(&ctx, &ctx.candidates[0], &agent.mobil, &base, lim);
                match assessment.blocker {
                    None | Some(Blocker::Incentive) if !has_room(target) => {
                        plan.denied = Some((target, "no room to complete the change".into()))
                    }
                    None | Some(Blocker::Incentive) => plan.start = Some(target),
                    Some(b) => plan.denied = Some((target, blocker_name(b).into())),
                }
            }
            ControlMode::Automatic => {
                if self.time() + 1e-9 >= agent.cooldown_until {
                    let ev = evaluate_lane_change(&ctx, &agent.mobil, &base, lim);
                    plan.start =
                        ev.assessments.iter().find(|a| a.blocker.is_none() && has_room(a.lane)).map(|a| a.lane);
                    plan.desire = ev.desired;
                }
            }
            ControlMode::Manual => {}
        }
        plan
    }

    fn commit_plans(&mut self, snapshot: &[SnapshotVehicle], plans: &[Plan]) {
        let t = self.time();
        let cfg = self.config.clone();
        let mut events = Vec::new();
        for (agent, plan) in self.agents.iter_mut().zip(plans) {
            let me = &snapshot[agent.id];
            agent.accel = plan.accel;
            if let Some(h) = agent.human.as_mut() {
                if h.mode == ControlMode::SemiAutomatic {
                    h.lane_request = None;
                }
            }
            if let Some((lane, reason)) = &plan.denied {
                events.push(
                    SimEvent::new(self.tick, t, EventType::LaneChangeDenied, Some(agent.id))
                        .with_lane(*lane)
                        .with_detail(reason.clone()),
                );
            }
            if let Some(to) = plan.start {
                let from = agent.state.lane;
                agent.state.lane_change = Some(LaneChange {
                    from,
                    to,
                    progress: 0.0,
                    s_start: me.s(),
                    distance: change_distance(me.v, &agent.mobil, &cfg.lane_change),
                });
                agent.change_started = t;
                events.push(SimEvent::new(self.tick, t, EventType::LaneChangeStart, Some(agent.id)).with_lane(to));
            }
            if agent.policy != Policy::Cooperative || agent.stopped || agent.mode() == ControlMode::Manual {
                agent.intent = None;
                continue;
            }
            if let Some(lc) = agent.state.lane_change {
                if agent.intent.is_none_or(|i| i.target != lc.to) {
                    agent.intent = Some(Intent { target: lc.to, created: t });
                }
                continue;
            }
            match (agent.intent, plan.desire) {
                (_, Some(d)) if t + 1e-9 >= agent.intent_block_until => {
                    if agent.intent.is_none_or(|i| i.target != d) {
                        agent.intent = Some(Intent { target: d, created: t });
                    }
                }
                (Some(_), None) => {
                    let w = plan.front_gap.map_or(0.0, |g| urgency_weight(g, cfg.coop.c, cfg.coop.kappa_u));
                    if w <= 0.0 {
                        agent.intent = None;
                    }
                }
                _ => {}
            }
            if let Some(intent) = agent.intent {
                if t - intent.created >= cfg.lane_change.intent_timeout - 1e-9 {
                    agent.intent = None;
                    agent.intent_block_until = t + cfg.lane_change.cooldown;
                    events.push(
                        SimEvent::new(self.tick, t, EventType::IntentAbandon, Some(agent.id)).with_lane(intent.target),
                    );
                }
            }
        }
        self.events.extend(events);

        self.registry = self
            .agents
            .iter()
            .zip(plans)
            .filter_map(|(a, plan)| {
                let intent = a.intent?;
                let me = &snapshot[a.id];
                Some(project_intent(
                    a.id,
                    (me.x, me.y),
                    me.v,
                    plan.front_gap,
                    intent.target,
                    &self.track,
                    &cfg.coop,
                    self.tick,
                ))
            })
            .collect();
        self.history.push_front(self.registry.clone());
        self.history.truncate(cfg.coop.latency_ticks as usize + 1);
    }

    /// Phase 3: steering and speed commands.
    fn control(&mut self) -> Result<(), SimError> {
        let cfg = &self.config;
        let track = &self.track;
        let run = |a: &mut Agent| -> Result<(), SimError> {
            let lim = &cfg.limits;
            let p = a.perceived;
            if let Some(h) = a.human.as_ref().filter(|h| h.mode == ControlMode::Manual) {
                a.cmd_v = h.throttle.max(0.0) * lim.max_speed;
                a.cmd_psi = h.steer * lim.max_steer;
                a.v_set = p.v.max(0.0);
                return Ok(());
            }
            let tracked = match a.state.lane_change {
                Some(lc) => {
                    let path = LaneChangePath {
                        lane: &track.lanes[lc.from],
                        from: lc.from,
                        to: lc.to,
                        s_start: lc.s_start,
                        distance: lc.distance,
                        offset: if lc.to > lc.from { -track.lane_spacing } else { track.lane_spacing },
                    };
                    track_path(&path, p.x, p.y, p.theta, &cfg.tracking)
                }
                None => track_path(&track.lanes[a.state.lane], p.x, p.y, p.theta, &cfg.tracking),
            };
            a.cmd_psi = tracked.map_err(|source| SimError::Vehicle { vehicle: a.id, source })?.0;
            if a.stopped {
                a.cmd_v = 0.0;
                a.v_set = 0.0;
                a.pid.reset();
            } else {
                let correction = velocity_pid(p.v, a.v_set, &mut a.pid, &cfg.pid, cfg.dt, lim);
                a.v_set = (a.v_set + a.accel * cfg.dt).clamp(0.0, lim.max_speed);
                a.cmd_v = a.v_set + correction * cfg.dt;
            }
            Ok(())
        };
        let results: Vec<Result<(), SimError>> = if cfg.engine.parallel {
            self.agents.par_iter_mut().map(run).collect()
        } else {
            self.agents.iter_mut().map(run).collect()
        };
        results.into_iter().collect()
    }

    /// Phase 4: commit all motion at once, then lane bookkeeping, collision
    /// checks and recording.
    fn integrate(&mut self) -> Result<(), SimError> {
        let (dt, lim) = (self.config.dt, self.config.limits);
        self.for_each_agent(|a| {
            a.state = step_kinematics(&a.state, a.cmd_v, a.cmd_psi, dt, &lim);
        });
        self.tick += 1;
        let t = self.time();
        let cooldown = self.config.lane_change.cooldown;
        let timeout = self.config.lane_change.execution_timeout;
        let mut events = Vec::new();
        for a in &mut self.agents {
            if a.mode() == ControlMode::Manual {
                let (lane, proj) = (0..self.track.lanes.len())
                    .map(|l| (l, self.track.lanes[l].closest(a.state.x, a.state.y)))
                    .min_by(|x, y| x.1.lateral_error.abs().total_cmp(&y.1.lateral_error.abs()))
                    .expect("track has lanes");
                a.state.lane = lane;
                a.state.s = proj.s_d;
                a.state.lateral = proj.lateral_error;
                continue;
            }
            if let Some(mut lc) = a.state.lane_change {
                let from = &self.track.lanes[lc.from];
                let path = LaneChangePath {
                    lane: from,
                    from: lc.from,
                    to: lc.to,
                    s_start: lc.s_start,
                    distance: lc.distance,
                    offset: 0.0,
                };
                lc.progress = path.progress(from.closest(a.state.x, a.state.y).s_d);
                if lc.progress >= 1.0 {
                    a.state.lane = lc.to;
                    a.state.lane_change = None;
                    a.cooldown_until = t + cooldown;
                    a.intent = None;
                    events
                        .push(SimEvent::new(self.tick, t, EventType::LaneChangeComplete, Some(a.id)).with_lane(lc.to));
                } else if t - a.change_started >= timeout - 1e-9 && lc.progress < ABANDON_PROGRESS {
                    a.state.lane_change = None;
                    a.intent = None;
                    a.cooldown_until = t + cooldown;
                    events.push(
                        SimEvent::new(self.tick, t, EventType::LaneChangeAbandon, Some(a.id))
                            .with_lane(lc.to)
                            .with_detail("timeout"),
                    );
                } else {
                    a.state.lane_change = Some(lc);
                }
            }
            a.state.reproject(&self.track).map_err(|source| SimError::Vehicle { vehicle: a.id, source })?;
        }
        self.events.extend(events);

        let now: BTreeSet<(usize, usize)> = detect_collisions(&self.states(), &lim).into_iter().collect();
        for &(i, j) in now.difference(&self.colliding) {
            let ev = self.event(EventType::Collision, Some(i)).with_other(j);
            self.events.push(ev);
            if self.config.engine.halt_on_collision {
                self.halted = true;
            }
        }
        self.colliding = now;
        if self.tick.is_multiple_of(u64::from(self.config.engine.record_every))
            || self.halted
            || self.tick == self.config.ticks()
        {
            self.record_rows();
        }
        Ok(())
    }

    fn record_rows(&mut self) {
        let t = self.time();
        for a in &self.agents {
            let s = &a.state;
            self.rows.push(RecordRow {
                tick: self.tick,
                t,
                id: a.id,
                lane: s.lane,
                s: s.s,
                x: s.x,
                y: s.y,
                theta: s.theta,
                v: s.v,
                psi: s.psi,
                lc_progress: s.lane_change.map(|lc| lc.progress),
                lc_target: s.lane_change.map(|lc| lc.to),
                accel: a.accel,
                stopped: a.stopped,
            });
        }
    }

    pub fn rows(&self) -> &[RecordRow] {
        &self.rows
    }

    pub fn into_record(self) -> RunRecord {
        RunRecord {
            lane_lengths: self.track.lanes.iter().map(|l| l.length).collect(),
            rows: self.rows,
            events: self.events,
            ticks: self.tick,
            halted: self.halted,
            config: self.config,
        }
    }
}

/// Longitudinal distance over which a change started at speed `v` blends.
fn change_distance(v: f64, mobil: &MobilParams, lc: &LaneChangeConfig) -> f64 {
    (v * mobil.gamma).max(lc.min_distance)
}

fn blocker_name(b: Blocker) -> &'static str {
    match b {
        Blocker::Overlap => "target lane occupied alongside",
        Blocker::Safety => "new follower would brake too hard",
        Blocker::Incentive => "no advantage",
        Blocker::EscapeGap => "gap to new leader too small",
        Blocker::CooperativeGap => "cooperative gap guard",
    }
}

/// Runs a scenario to its configured duration (or the first collision when
/// halting is enabled).
pub fn run_scenario(config: ScenarioConfig) -> Result<RunRecord, SimError> {
    let mut world = World::new(config)?;
    while !world.is_finished() {
        world.step()?;
    }
    Ok(world.into_record())
}
