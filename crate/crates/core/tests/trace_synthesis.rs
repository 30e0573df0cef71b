use qos_core::trace::{
    parse_log, speed_at, synth_mobility_trace, write_log_string, MobilityScenario, SpeedStep,
};

#[test]
fn reflecting_track_stays_in_bounds() {
    for scenario in [
        MobilityScenario::constant_speed(50.0, 900).with_seed(3),
        MobilityScenario::variable_speed(900).with_seed(4),
    ] {
        let rows = synth_mobility_trace(&scenario).unwrap();
        assert_eq!(rows.len(), 900);
        for r in &rows {
            assert!(r.dist_m >= scenario.track_min_m && r.dist_m <= scenario.track_max_m, "{}", r.dist_m);
        }
        // both ends are reached at least once in 900 s
        let lo = rows.iter().map(|r| r.dist_m).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.dist_m).fold(0.0, f64::max);
        assert!(lo < scenario.track_min_m + 20.0 && hi > scenario.track_max_m - 20.0);
    }
}

#[test]
fn path_length_matches_speed_integral() {
    let mut scenario = MobilityScenario::variable_speed(600).with_seed(8);
    scenario.track_min_m = 1.0;
    scenario.track_max_m = 1e6;
    let rows = synth_mobility_trace(&scenario).unwrap();
    let walked: f64 = rows.windows(2).map(|w| (w[1].dist_m - w[0].dist_m).abs()).sum();
    let integral: f64 = (0..600)
        .map(|t| speed_at(&scenario.speed_profile, t as f64).unwrap() / 3.6)
        .sum();
    let max_step = 50.0 / 3.6;
    assert!(walked <= integral + 1e-3);
    assert!(integral - walked <= max_step + 1e-3, "{walked} vs {integral}");
}

#[test]
fn farther_static_points_never_deliver_more() {
    let distances = [540.0, 900.0, 1300.0, 1700.0, 2100.0];
    let mut means = Vec::new();
    for d in distances {
        let total: f64 = (0..10u64)
            .map(|seed| {
                let rows = synth_mobility_trace(&MobilityScenario::static_point(d, 120).with_seed(seed)).unwrap();
                rows.iter().map(|r| r.tput_bps).sum::<f64>() / rows.len() as f64
            })
            .sum();
        means.push(total / 10.0);
    }
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
    assert_eq!(means[4], 0.0);
}

#[test]
fn emitted_rows_parse_back() {
    let scenario = MobilityScenario::variable_speed(300).with_seed(11);
    let rows = synth_mobility_trace(&scenario).unwrap();
    let text = write_log_string(&rows).unwrap();
    assert_eq!(parse_log(text.as_bytes()).unwrap(), rows);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let a = MobilityScenario::constant_speed(50.0, 200).with_seed(21);
    let first = write_log_string(&synth_mobility_trace(&a).unwrap()).unwrap();
    let second = write_log_string(&synth_mobility_trace(&a.clone()).unwrap()).unwrap();
    assert_eq!(first, second);
    let other = write_log_string(&synth_mobility_trace(&a.with_seed(22)).unwrap()).unwrap();
    assert_ne!(first, other);
}

#[test]
fn masked_zone_delivers_nothing() {
    let mut scenario = MobilityScenario::static_point(700.0, 30);
    scenario.rate_map = scenario.rate_map.clone().with_mask_zones(vec![(650.0, 750.0)]).unwrap();
    let rows = synth_mobility_trace(&scenario).unwrap();
    assert!(rows.iter().all(|r| r.tput_bps == 0.0));
    assert!(rows.iter().all(|r| r.lost_pkts <= r.total_pkts));
}

#[test]
fn stepped_profile_lookup() {
    let profile = [
        SpeedStep { start_s: 0.0, speed_kmh: 10.0 },
        SpeedStep { start_s: 100.0, speed_kmh: 50.0 },
    ];
    assert_eq!(speed_at(&profile, 99.0).unwrap(), 10.0);
    assert_eq!(speed_at(&profile, 100.0).unwrap(), 50.0);
    assert!(speed_at(&profile, -1.0).is_err());
}
