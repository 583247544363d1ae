mod common;

use common::checks::{cli_parity, get, get_json};
use common::serve;

#[tokio::test(flavor = "multi_thread")]
async fn offline_cli_matches_a_live_session() {
    cli_parity().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn http_routes() {
    let addr = serve(1.0).await;
    let scenarios = get_json(addr, "/scenarios").await;
    let ids: Vec<_> = scenarios.as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap().to_string()).collect();
    for id in ["v-channel", "plane", "two-ridge-valley", "island"] {
        assert!(ids.iter().any(|i| i == id), "{id} missing from {ids:?}");
    }
    let defaults: Vec<_> = scenarios.as_array().unwrap().iter().filter(|s| s["default"] == true).collect();
    assert_eq!(defaults.len(), 1);
    assert_eq!(defaults[0]["id"], "v-channel");

    // static layers for a scenario nobody has opened
    let island = get_json(addr, "/layers/island").await;
    let names: Vec<_> =
        island["layers"].as_array().unwrap().iter().map(|l| l["layer"].as_str().unwrap().to_string()).collect();
    assert_eq!(names[0], "susceptibility");
    assert!(names.iter().any(|n| n == "vulnerability"));
    assert_eq!(names.iter().filter(|n| n.starts_with("susceptibility_x")).count(), 3);
    let first = &island["layers"][0]["raster"];
    let values = debris_server::protocol::decode_f32(first["values"].as_str().unwrap()).unwrap();
    assert_eq!(values.len() as u64, first["n_cols"].as_u64().unwrap() * first["n_rows"].as_u64().unwrap());

    let (status, _) = get(addr, "/layers/nowhere").await;
    assert_eq!(status, 404);

    let all = get_json(addr, "/events").await;
    let window = get_json(addr, "/events?from=2005&to=2008").await;
    let ids: Vec<_> = window.as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, ["e2", "e3", "e4"]);
    assert!(all.as_array().unwrap().len() > ids.len());
    let (status, _) = get(addr, "/events?from=2010&to=2000").await;
    assert_eq!(status, 400);
}
