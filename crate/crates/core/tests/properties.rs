use minicar_core::coordination::{neighbors_within_range, urgency_weight, SnapshotVehicle};
use minicar_core::idm::{
    boosted_desired_speed, cidm_acceleration, desired_gap, escape_distance, idm_acceleration, FrontTarget, IdmParams,
};
use minicar_core::track::{build_track, TrackSpec};
use proptest::prelude::*;

const MAX_DECEL: f64 = 2.0;

fn preset() -> impl Strategy<Value = IdmParams> {
    prop_oneof![Just(IdmParams::normal()), Just(IdmParams::aggressive())]
}

proptest! {
    #[test]
    fn cooperative_accel_never_exceeds_plain(p in preset(), v in 0.0f64..0.8, gap in 0.05f64..5.0, front in 0.0f64..0.8,
                                             vgap in 0.05f64..5.0, vfront in 0.0f64..0.8, w in 0.0f64..1.0) {
        let real = FrontTarget::real(gap, v, front);
        let virt = FrontTarget::virtual_vehicle(vgap, v, vfront, w);
        let plain = idm_acceleration(v, Some(&real), &p, p.s0, MAX_DECEL);
        let coop = cidm_acceleration(v, Some(&real), Some(&virt), &p, p.s0, p.s0, MAX_DECEL);
        prop_assert!(coop <= plain);
        prop_assert_eq!(cidm_acceleration(v, Some(&real), None, &p, p.s0, p.s0, MAX_DECEL), plain);
    }

    #[test]
    fn urgency_is_bounded_and_falls_with_gap(g1 in -1.0f64..5.0, g2 in -1.0f64..5.0, c in 0.5f64..4.0, k in 0.1f64..2.0) {
        let (w1, w2) = (urgency_weight(g1, c, k), urgency_weight(g2, c, k));
        prop_assert!((0.0..=1.0).contains(&w1));
        if g1 <= g2 {
            prop_assert!(w1 >= w2);
        }
        prop_assert_eq!(urgency_weight(c, c, k), 0.0);
    }

    #[test]
    fn boost_stays_between_desired_and_top_speed(v0 in 0.1f64..1.0, w in 0.0f64..1.0, trail in -1.0f64..4.0, range in 0.5f64..4.0) {
        let max_speed = 1.5;
        let b = boosted_desired_speed(v0, w, trail, range, max_speed);
        prop_assert!(b >= v0 && b <= max_speed);
        prop_assert_eq!(boosted_desired_speed(v0, 0.0, trail, range, max_speed), v0);
    }

    #[test]
    fn idm_accel_rises_with_gap(p in preset(), v in 0.0f64..0.8, front in 0.0f64..0.8, s1 in 0.05f64..5.0, ds in 0.0f64..2.0) {
        let a = |s| idm_acceleration(v, Some(&FrontTarget::real(s, v, front)), &p, p.s0, MAX_DECEL);
        prop_assert!(a(s1 + ds) >= a(s1));
        prop_assert!(a(s1) <= idm_acceleration(v, None, &p, p.s0, MAX_DECEL));
    }

    #[test]
    fn idm_accel_falls_with_closing_speed(p in preset(), v in 0.0f64..0.8, gap in 0.05f64..5.0, f1 in 0.0f64..0.8, df in 0.0f64..0.5) {
        let a = |front| idm_acceleration(v, Some(&FrontTarget::real(gap, v, front)), &p, p.s0, MAX_DECEL);
        prop_assert!(a(f1 + df) >= a(f1));
    }

    #[test]
    fn desired_gap_never_below_jam(p in preset(), v in 0.0f64..1.5, dv in -1.5f64..1.5) {
        prop_assert!(desired_gap(v, dv, &p) >= p.s0);
    }

    #[test]
    fn escape_distance_shrinks_as_leader_speeds_up(f1 in 0.0f64..0.6, df in 0.0f64..0.3) {
        let (v0, l) = (0.4, 0.122);
        let e1 = escape_distance(f1, v0, l);
        prop_assert!(escape_distance(f1 + df, v0, l) <= e1 + 1e-15);
        prop_assert!((0.0..=2.0 * l).contains(&e1));
    }

    #[test]
    fn visibility_is_symmetric(cars in prop::collection::vec((0usize..2, 0.0f64..1.0), 2..12), c in 0.2f64..6.0) {
        let track = build_track(&TrackSpec::default()).unwrap();
        let fleet: Vec<SnapshotVehicle> = cars
            .iter()
            .enumerate()
            .map(|(id, &(lane, frac))| {
                let s = frac * track.lanes[lane].length;
                let pose = track.lanes[lane].pose_at(s);
                SnapshotVehicle { id, x: pose.x, y: pose.y, v: 0.4, lane, lane_change: None, positions: vec![(lane, s)] }
            })
            .collect();
        for i in 0..fleet.len() {
            for j in neighbors_within_range(i, &fleet, &track, c) {
                prop_assert!(j != i);
                prop_assert!(neighbors_within_range(j, &fleet, &track, c).contains(&i));
            }
        }
    }
}
