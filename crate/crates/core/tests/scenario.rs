use chrono::NaiveDate;
use debris_core::fixtures;
use debris_core::scenario::{
    filter_events, filter_events_by_year, load_events, load_scenario, parse_events, save_events, save_scenario,
    susceptibility_layer, EventScale, ScenarioCatalog, CLIMATE_MULTIPLIERS,
};
use debris_core::session::{CommandPayload, Session};
use debris_core::Error;

fn day(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn shipped_scenarios_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for s in fixtures::scenarios() {
        s.validate().unwrap();
        let path = save_scenario(&s, dir.path().join(&s.id)).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back.id, s.id);
        assert_eq!(back.release, s.release);
        assert_eq!(back.params, s.params);
        assert_eq!(back.buildings, s.buildings);
        assert_eq!(back.seed, s.seed);
        // terrain passes through a text grid
        for (a, b) in back.terrain.heights.iter().zip(&s.terrain.heights) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
    let cat = ScenarioCatalog::load_dir(dir.path()).unwrap();
    let mut ids: Vec<_> = cat.ids().map(str::to_string).collect();
    ids.sort();
    let mut want: Vec<_> = fixtures::scenarios().into_iter().map(|s| s.id).collect();
    want.sort();
    assert_eq!(ids, want);
}

#[test]
fn loaded_scenario_runs_like_the_original() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = fixtures::v_channel_scenario(20.0);
    s.params.duration = 0.2;
    let back = load_scenario(save_scenario(&s, dir.path()).unwrap()).unwrap();
    let run = |sc| {
        let mut sess = Session::<f64>::new(sc).unwrap();
        sess.submit(CommandPayload::Start).unwrap();
        sess.run_to_end().unwrap();
        sess.state().particles.len()
    };
    assert_eq!(run(s), run(back));
}

#[test]
fn climate_multipliers_scale_volume_and_rain() {
    let island = fixtures::scenarios().into_iter().find(|s| s.id == "island").unwrap();
    let rain = island.rainfall.clone().unwrap();
    for m in CLIMATE_MULTIPLIERS {
        let scaled = island.scale(m).unwrap();
        assert_eq!(scaled.release.volume_m3, island.release.volume_m3 * m);
        let r = scaled.rainfall.as_ref().unwrap();
        for (a, b) in r.raster.values.iter().zip(&rain.raster.values) {
            assert_eq!(*a, b * m);
        }
        // the proxy is normalized, so a uniform scale leaves it unchanged
        let base = susceptibility_layer(&island, &rain).unwrap();
        let hot = susceptibility_layer(&scaled, r).unwrap();
        assert!(hot.proxy);
        for (a, b) in hot.raster.values.iter().zip(&base.raster.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert_eq!(island.scale(1.0).unwrap().content_hash(), island.content_hash());
    assert_ne!(island.scale(1.5).unwrap().content_hash(), island.content_hash());
    assert!(island.scale(-1.0).is_err());
}

#[test]
fn event_catalogue_filters_by_date() {
    let events = fixtures::events();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("events.csv");
    save_events(&events, &p).unwrap();
    assert_eq!(load_events(&p).unwrap(), events);
    let mid = filter_events(&events, day(2005, 1, 1), day(2008, 12, 31)).unwrap();
    assert_eq!(mid.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["e2", "e3", "e4"]);
    assert_eq!(filter_events_by_year(&events, 2005, 2008).unwrap(), mid);
    assert!(filter_events(&events, day(2010, 1, 1), day(2000, 1, 1)).is_err());
    assert!(events.iter().any(|e| matches!(e.scale, EventScale::Category(_))));
}

#[test]
fn malformed_event_rows_name_their_line() {
    let text = "id,date,x,y,scale,description\na,2001-02-03,1,2,5,ok\nb,2001-13-40,1,2,5,bad date\n";
    match parse_events(text.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let neg = "id,date,x,y,scale,description\na,2001-02-03,1,2,-5,neg\n";
    assert!(parse_events(neg.as_bytes()).is_err());
    let header = "id,when,x,y,scale,description\n";
    assert!(matches!(parse_events(header.as_bytes()), Err(Error::Parse { line: 1, .. })));
}
