use debris_core::engine::Polygon;
use debris_core::fixtures;
use debris_core::risk::{
    export_layer, footprint, footprint_area, hazard_map, impact_force, query_point, read_layer, risk_layers,
    runout_compare, vulnerability_raster, Attenuation, BarrierOutcome, HazardOptions, LayerSidecar,
};
use debris_core::scenario::{BuildingFootprint, Release, Scenario, ScenarioCatalog};
use debris_core::session::{replay_scenario, CommandPayload, Session, SteeringCommand};
use debris_core::Error;

fn cmd(seq: u64, payload: CommandPayload) -> SteeringCommand {
    SteeringCommand { seq, t: 0.0, payload }
}

fn v_log() -> Vec<SteeringCommand> {
    vec![cmd(1, fixtures::v_channel_barrier_command()), cmd(2, CommandPayload::Start)]
}

#[test]
fn barrier_shrinks_runout_footprint() {
    let cat = ScenarioCatalog::single(fixtures::v_channel_scenario(60.0));
    let cmp = runout_compare::<f64>(&cat, "v-channel", &v_log(), None).unwrap();
    assert!(cmp.area_delta > 0.0, "delta {}", cmp.area_delta);
    // at this volume nothing wets the ground past the wall
    let fx = fixtures::v_channel().barrier.center.x;
    let g = cmp.footprint_with.geometry;
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            if g.center(c, r).0 > fx - 3.0 {
                assert!(!(cmp.footprint_with.get(c, r) > 0.0 && g.center(c, r).0 > fx + 2.0));
            }
        }
    }
}

#[test]
fn compare_without_barriers_has_zero_delta() {
    let mut s = fixtures::v_channel_scenario(30.0);
    s.params.duration = 3.0;
    let cat = ScenarioCatalog::single(s);
    let cmp = runout_compare::<f64>(&cat, "v-channel", &[cmd(1, CommandPayload::Start)], None).unwrap();
    assert_eq!(cmp.area_delta, 0.0);
    assert_eq!(cmp.footprint_with, cmp.footprint_without);
}

#[test]
fn empty_release_leaves_empty_footprints() {
    let mut s = fixtures::v_channel_scenario(0.0);
    s.params.duration = 0.5;
    s.params.boulders.count = 0;
    let cat = ScenarioCatalog::single(s);
    let cmp = runout_compare::<f64>(&cat, "v-channel", &v_log(), None).unwrap();
    assert_eq!(footprint_area(&cmp.footprint_with), 0.0);
    assert_eq!(footprint_area(&cmp.footprint_without), 0.0);
    assert_eq!(cmp.area_delta, 0.0);
}

fn column() -> Scenario {
    // 4 x 4 m column, 8 m³: 0.5 m deep
    let release = Release { polygon: Polygon::rect(8.0, 8.0, 12.0, 12.0).0, volume_m3: 8.0 };
    let mut s = Scenario::new("column", fixtures::flat(20, 20, 1.0, 0.0), release, 2);
    s.params.dt = 2e-3;
    s.params.duration = 0.5;
    s
}

#[test]
fn query_point_reads_initial_column_depth() {
    let s = replay_scenario::<f64>(&column(), &[cmd(1, CommandPayload::Start)], None).unwrap();
    let series = query_point(s.history(), 10.2, 9.7).unwrap();
    assert!(series.len() > 2);
    let (t0, h0) = series[0];
    assert_eq!(t0, 0.0);
    assert!((h0 - 0.5).abs() <= 0.05, "h = {h0}");
    assert!(series.windows(2).all(|w| w[1].0 > w[0].0));
    // the column spreads onto dry ground
    let outside = query_point(s.history(), 12.5, 10.0).unwrap();
    assert_eq!(outside[0].1, 0.0);
    assert!(outside.last().unwrap().1 > 0.0);
    assert!(query_point(s.history(), -1.0, 5.0).is_err());
}

#[test]
fn hazard_map_follows_impact_formula() {
    let scenario = column();
    let s = replay_scenario::<f64>(&scenario, &[cmd(1, CommandPayload::Start)], None).unwrap();
    let opts = HazardOptions { attenuation: Attenuation::Off, ..HazardOptions::from_scenario(&scenario) };
    let map = hazard_map(s.history(), &scenario.terrain, &[], &opts).unwrap();
    assert!(!map.samples.is_empty());
    for smp in &map.samples {
        let own = 2.5 * scenario.params.rho * smp.v * smp.v * smp.h0 * 1.0;
        assert!((smp.force - own).abs() <= 1e-9 * own.max(1.0));
        assert_eq!(smp.h0, s.history().max_depth[smp.cell]);
    }
    let n = &map.normalized.values;
    assert!(n.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(n.contains(&1.0));
    assert_eq!(map.colormap, "red_yellow_green");
}

#[test]
fn landing_attenuation_never_raises_force() {
    let scenario = fixtures::v_channel_scenario(40.0);
    let mut sess = Session::<f64>::new(scenario.clone()).unwrap();
    sess.submit(fixtures::v_channel_barrier_command()).unwrap();
    sess.submit(CommandPayload::Start).unwrap();
    sess.run_until(3.0).unwrap();
    let base = HazardOptions::from_scenario(&scenario);
    let overtopped = vec![BarrierOutcome { barrier: fixtures::v_channel().barrier, overtopped: true }];
    let map = |a: Attenuation| {
        hazard_map(sess.history(), &scenario.terrain, &overtopped, &HazardOptions { attenuation: a, ..base }).unwrap()
    };
    let off = map(Attenuation::Off);
    let down = map(Attenuation::DownstreamOfBarriers);
    let whole = map(Attenuation::WholePath);
    let fx = fixtures::v_channel().barrier.center.x + 0.5;
    let g = off.force.geometry;
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            let (o, d, w) = (off.force.get(c, r), down.force.get(c, r), whole.force.get(c, r));
            assert!(d <= o && w <= o);
            if g.center(c, r).0 < fx {
                assert_eq!(d, o);
            }
        }
    }
    // barrier not overtopped: nothing is attenuated
    let held = vec![BarrierOutcome { barrier: fixtures::v_channel().barrier, overtopped: false }];
    let kept = hazard_map(sess.history(), &scenario.terrain, &held, &base).unwrap();
    assert_eq!(kept.force, off.force);
}

#[test]
fn hazard_map_needs_frames() {
    let scenario = column();
    let s = Session::<f64>::new(scenario.clone()).unwrap();
    let err = hazard_map(s.history(), &scenario.terrain, &[], &HazardOptions::from_scenario(&scenario));
    assert!(matches!(err, Err(Error::Domain(_))));
}

#[test]
fn risk_is_hazard_times_vulnerability() {
    let mut scenario = column();
    scenario.buildings.push(BuildingFootprint { polygon: Polygon::rect(13.0, 8.0, 16.0, 12.0).0, height: 3.0 });
    let s = replay_scenario::<f64>(&scenario, &[cmd(1, CommandPayload::Start)], None).unwrap();
    let layers = risk_layers(&scenario, s.history(), &[], &HazardOptions::from_scenario(&scenario)).unwrap();
    assert!(layers.population_proxy);
    for i in 0..layers.risk.values.len() {
        assert_eq!(layers.risk.values[i], layers.hazard.normalized.values[i] * layers.vulnerability.values[i]);
    }
    let (v, proxy) = vulnerability_raster(&scenario).unwrap();
    assert!(proxy);
    assert!(v.values.iter().any(|&x| x > 0.99));
    assert_eq!(layers.footprint, footprint(s.history(), scenario.params.h_min));
}

#[test]
fn layers_round_trip_through_disk() {
    let scenario = column();
    let s = replay_scenario::<f64>(&scenario, &[cmd(1, CommandPayload::Start)], None).unwrap();
    let map = hazard_map(s.history(), &scenario.terrain, &[], &HazardOptions::from_scenario(&scenario)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let side = LayerSidecar::new("hazard", map.colormap, &map.normalized, false).unwrap();
    export_layer(dir.path(), &map.normalized, &side).unwrap();
    let (r, back) = read_layer(dir.path(), "hazard").unwrap();
    assert_eq!(back, side);
    for (a, b) in r.values.iter().zip(&map.normalized.values) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(LayerSidecar::new("hazard", "rainbow", &map.normalized, false).is_err());
}

#[test]
fn impact_force_reference_values() {
    assert_eq!(impact_force(2.5, 1000.0, 4.0, 1.0, 5.0).unwrap(), 200_000.0);
    assert_eq!(impact_force(2.5, 2000.0, 0.0, 1.0, 5.0).unwrap(), 0.0);
    assert!(impact_force(2.5, 1000.0, 1.0, -1.0, 1.0).is_err());
}
