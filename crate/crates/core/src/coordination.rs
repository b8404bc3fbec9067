//! Intent sharing between vehicles: virtual vehicles projected onto a target
//! lane, their urgency weights, communication range, and the per-tick
//! neighbor views the driver models consume.

use serde::{Deserialize, Serialize};

use crate::dynamics::LaneChange;
use crate::lane_change::Neighbor;
use crate::track::{LaneId, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoopParams {
    /// Communication / visibility range (m).
    pub c: f64,
    /// Urgency gain (1/m).
    pub kappa_u: f64,
    /// Ticks before a broadcast intent reaches other vehicles.
    pub latency_ticks: u32,
    /// Probability that a vehicle misses an intent broadcast on a tick.
    pub drop_probability: f64,
}

impl Default for CoopParams {
    fn default() -> Self {
        Self { c: 2.0, kappa_u: 0.5, latency_ticks: 0, drop_probability: 0.0 }
    }
}

impl CoopParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c > 0.0) {
            return Err(format!("c must be > 0, got {}", self.c));
        }
        if !(self.kappa_u > 0.0) {
            return Err(format!("kappa_u must be > 0, got {}", self.kappa_u));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!("drop_probability must be in [0, 1], got {}", self.drop_probability));
        }
        Ok(())
    }
}

/// Projected post-lane-change state of its owner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualVehicle {
    pub owner: usize,
    pub lane: LaneId,
    pub s: f64,
    pub v: f64,
    pub weight: f64,
    pub created_tick: u64,
}

/// `clamp(kappa_u * (c - gap), 0, 1)`.
pub fn urgency_weight(gap_to_front: f64, c: f64, kappa_u: f64) -> f64 {
    (kappa_u * (c - gap_to_front)).clamp(0.0, 1.0)
}

/// Places the owner's virtual counterpart on `target_lane`, level with the
/// owner's position `(x, y)`. `front_gap` is the owner's gap to its real
/// leader on its current lane; `None` means free road.
pub fn project_intent(
    owner: usize,
    (x, y): (f64, f64),
    v: f64,
    front_gap: Option<f64>,
    target_lane: LaneId,
    track: &Track,
    coop: &CoopParams,
    tick: u64,
) -> VirtualVehicle {
    let weight = front_gap.map_or(0.0, |g| urgency_weight(g, coop.c, coop.kappa_u));
    VirtualVehicle {
        owner,
        lane: target_lane,
        s: track.lanes[target_lane].closest(x, y).s_d,
        v,
        weight,
        created_tick: tick,
    }
}

/// One vehicle as seen in a tick snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotVehicle {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub lane: LaneId,
    pub lane_change: Option<LaneChange>,
    /// Arc length on every lane the vehicle occupies.
    pub positions: Vec<(LaneId, f64)>,
}

impl SnapshotVehicle {
    pub fn s_on(&self, lane: LaneId) -> Option<f64> {
        self.positions.iter().find(|(l, _)| *l == lane).map(|&(_, s)| s)
    }

    /// Arc length on the primary lane.
    pub fn s(&self) -> f64 {
        self.s_on(self.lane).unwrap_or_else(|| self.positions[0].1)
    }

    /// Arc length on `lane`, projecting if the vehicle does not occupy it.
    pub fn s_on_or_project(&self, lane: LaneId, track: &Track) -> f64 {
        self.s_on(lane).unwrap_or_else(|| track.lanes[lane].closest(self.x, self.y).s_d)
    }
}

/// Wrap-aware along-track distance between two vehicles, each placed by its
/// own-lane arc length. Symmetric in its arguments.
pub fn along_track_distance(a: &SnapshotVehicle, b: &SnapshotVehicle, track: &Track) -> f64 {
    let (la, lb) = (track.lanes[a.lane].length, track.lanes[b.lane].length);
    let d = (a.s() / la - b.s() / lb).abs() % 1.0;
    d.min(1.0 - d) * 0.5 * (la + lb)
}

/// Ids of all vehicles within range `c` of the ego, excluding the ego.
pub fn neighbors_within_range(ego: usize, fleet: &[SnapshotVehicle], track: &Track, c: f64) -> Vec<usize> {
    let me = &fleet[ego];
    fleet.iter().filter(|o| o.id != me.id && along_track_distance(me, o, track) <= c).map(|o| o.id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualNeighbor {
    pub owner: usize,
    pub gap: f64,
    pub speed: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneNeighbors {
    pub lane: LaneId,
    pub ego_s: f64,
    pub front: Option<Neighbor>,
    pub rear: Option<Neighbor>,
    pub virtual_front: Option<VirtualNeighbor>,
    pub virtual_rear: Option<VirtualNeighbor>,
}

impl LaneNeighbors {
    /// Gap from the nearest virtual vehicle behind up to the ego.
    pub fn trail_gap(&self) -> Option<f64> {
        self.virtual_rear.map(|v| v.gap)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborView {
    pub lanes: Vec<LaneNeighbors>,
}

impl NeighborView {
    pub fn lane(&self, lane: LaneId) -> Option<&LaneNeighbors> {
        self.lanes.iter().find(|l| l.lane == lane)
    }
}

/// Nearest real and virtual vehicles ahead of and behind the ego on each
/// lane of interest. Vehicles changing lanes count on both lanes; virtual
/// vehicles are visible only while their owner is within range `c`, and the
/// ego's own virtual vehicle is never included.
pub fn build_neighbor_view(
    ego: usize,
    fleet: &[SnapshotVehicle],
    virtuals: &[VirtualVehicle],
    lanes_of_interest: &[LaneId],
    track: &Track,
    c: f64,
    body_length: f64,
) -> NeighborView {
    let me = &fleet[ego];
    let in_range = neighbors_within_range(ego, fleet, track, c);
    let mut view = NeighborView { lanes: Vec::with_capacity(lanes_of_interest.len()) };
    for &lane in lanes_of_interest {
        let len = track.lanes[lane].length;
        let ego_s = me.s_on_or_project(lane, track);
        let mut out = LaneNeighbors { lane, ego_s, ..Default::default() };
        let mut best_front = f64::INFINITY;
        let mut best_rear = f64::INFINITY;
        for other in fleet.iter().filter(|o| o.id != me.id) {
            let Some(s) = other.s_on(lane) else { continue };
            let ahead = (s - ego_s).rem_euclid(len);
            if ahead < best_front {
                best_front = ahead;
                out.front = Some(Neighbor { id: other.id, gap: ahead - body_length, speed: other.v });
            }
            let behind = (ego_s - s).rem_euclid(len);
            if behind > 0.0 && behind < best_rear {
                best_rear = behind;
                out.rear = Some(Neighbor { id: other.id, gap: behind - body_length, speed: other.v });
            }
        }
        let mut best_vf = f64::INFINITY;
        let mut best_vr = f64::INFINITY;
        for vv in virtuals {
            if vv.lane != lane || vv.owner == me.id || !in_range.contains(&vv.owner) {
                continue;
            }
            let ahead = (vv.s - ego_s).rem_euclid(len);
            let entry =
                |d: f64| VirtualNeighbor { owner: vv.owner, gap: d - body_length, speed: vv.v, weight: vv.weight };
            if ahead <= len / 2.0 {
                if ahead < best_vf {
                    best_vf = ahead;
                    out.virtual_front = Some(entry(ahead));
                }
            } else {
                let behind = len - ahead;
                if behind < best_vr {
                    best_vr = behind;
                    out.virtual_rear = Some(entry(behind));
                }
            }
        }
        view.lanes.push(out);
    }
    view
}
