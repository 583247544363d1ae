//! End-to-end scenarios shared by the integration tests and the acceptance runner.
//! Each panics on the first violated expectation.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use debris_core::scenario::save_scenario;
use debris_core::session::{replay, save_command_log, SteeringCommand};
use debris_server::cli::{self, SourceArgs};
use debris_server::hub::Precision;
use debris_server::layers::{layers_json, run_layers, scenario_layers};
use futures::{SinkExt, StreamExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

use super::*;

/// First claimant wins, the others are denied, and the lock passes on after a disconnect.
pub async fn three_client_lock() {
    let addr = serve(1.0).await;
    let mut a = connect(addr, "lock").await;
    let mut b = connect(addr, "lock").await;
    let mut c = connect(addr, "lock").await;

    assert_ack(&a.request("claim_steering", Value::Null).await);
    assert_eq!(code(&b.request("claim_steering", Value::Null).await), "lock_held");
    assert_eq!(code(&c.request("claim_steering", Value::Null).await), "lock_held");
    // claiming twice is harmless for the holder
    assert_ack(&a.request("claim_steering", Value::Null).await);
    assert_eq!(c.status().await["holder"], json!(a.connection));

    assert_eq!(code(&b.request("release_steering", Value::Null).await), "not_steering");
    a.close().await;

    let start = std::time::Instant::now();
    loop {
        let r = c.request("claim_steering", Value::Null).await;
        if r["type"] == "ack" {
            break;
        }
        assert_eq!(code(&r), "lock_held");
        assert!(start.elapsed() < Duration::from_secs(5), "lock never released");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(c.status().await["holder"], json!(c.connection));
    assert_eq!(code(&b.request("claim_steering", Value::Null).await), "lock_held");
    assert_ack(&c.request("release_steering", Value::Null).await);
    assert_ack(&b.request("claim_steering", Value::Null).await);
}

const TYPES: &[&str] = &[
    "load_scenario",
    "place_barrier",
    "move_barrier",
    "set_barrier_params",
    "remove_barrier",
    "start",
    "pause",
    "reset",
    "query_point",
    "run_compare",
    "barrier_report",
    "claim_steering",
    "release_steering",
    "status",
    "get_log",
    "warp",
    "",
];

fn number(rng: &mut impl Rng) -> Value {
    match rng.gen_range(0..8) {
        0 => json!(0),
        1 => json!(-1e300),
        2 => json!(1e300),
        3 => json!(rng.gen_range(-1e6..1e6)),
        4 => json!("7"),
        5 => Value::Null,
        6 => json!(-rng.gen_range(0.0..5.0)),
        _ => json!(rng.gen_range(0.0..80.0)),
    }
}

fn id(rng: &mut impl Rng) -> Value {
    json!(["gully", "b2", "", "v-channel", "plane", "island"].choose(rng).unwrap())
}

fn barrier(rng: &mut impl Rng) -> Value {
    json!({
        "id": id(rng),
        "center": [number(rng), number(rng), number(rng)],
        "yaw": number(rng),
        "height": number(rng),
        "width": number(rng),
        "thickness": number(rng),
        "face_angle": number(rng),
    })
}

/// One envelope and the seq its reply must carry, if the text is well formed enough to have one.
fn envelope(rng: &mut impl Rng, seq: u64) -> (String, Option<u64>) {
    match rng.gen_range(0..20) {
        0 => {
            let len = rng.gen_range(0..40);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen_range(32..127)).collect();
            (String::from_utf8(bytes).unwrap(), None)
        }
        1 => (json!([seq, "status"]).to_string(), None),
        2 => (json!({ "v": 1, "type": "status", "seq": -3 }).to_string(), None),
        _ => {
            let kind = *TYPES.choose(rng).unwrap();
            let mut m = json!({ "v": 1, "type": kind, "seq": seq });
            if rng.gen_bool(0.05) {
                m["v"] = json!(rng.gen_range(0..4));
            }
            if rng.gen_bool(0.05) {
                m.as_object_mut().unwrap().remove("type");
            }
            let keys =
                ["barrier", "id", "center", "yaw", "height", "width", "face_angle", "x", "y", "until", "scenario_id"];
            for _ in 0..rng.gen_range(0..4) {
                let k = *keys.choose(rng).unwrap();
                m[k] = match k {
                    "barrier" => barrier(rng),
                    "id" | "scenario_id" => id(rng),
                    "center" => json!([number(rng), number(rng), number(rng)]),
                    // keep comparisons short: they replay the whole log twice
                    "until" => json!(rng.gen_range(0.0..0.1)),
                    _ => number(rng),
                };
            }
            if kind == "run_compare" && m.get("until").is_none() {
                m["until"] = json!(0.05);
            }
            (m.to_string(), Some(seq))
        }
    }
}

/// Send `count` random envelopes on one connection; every one is answered exactly once
/// and the server keeps serving afterwards.
pub async fn fuzz_envelopes(count: usize) {
    let addr = super::serve(0.0).await;
    let client = connect(addr, "fuzz").await;
    let (mut sink, mut stream) = client.ws.split();

    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut expected: HashMap<u64, usize> = HashMap::new();
    let mut anonymous = 0usize;
    let mut texts = Vec::with_capacity(count);
    for i in 0..count {
        let (text, seq) = envelope(&mut rng, i as u64 + 1);
        match seq {
            Some(s) => *expected.entry(s).or_default() += 1,
            None => anonymous += 1,
        }
        texts.push(text);
    }
    // claim first so the steering commands reach the solver
    texts.insert(0, json!({ "v": 1, "type": "claim_steering", "seq": 0 }).to_string());
    expected.insert(0, 1);

    let total = texts.len();
    let reader = tokio::spawn(async move {
        let mut replies: HashMap<u64, usize> = HashMap::new();
        let mut anon = 0usize;
        let mut frames = 0usize;
        let mut seen = 0usize;
        loop {
            // after the last reply, linger briefly to catch duplicates
            let wait = if seen < total { Duration::from_secs(20) } else { Duration::from_millis(300) };
            let next = tokio::time::timeout(wait, stream.next()).await;
            let Ok(Some(Ok(msg))) = next else { break };
            let Message::Text(t) = msg else { continue };
            let m: Value = serde_json::from_str(t.as_str()).expect("server sends JSON");
            assert_eq!(m["v"], 1, "{m}");
            match m["type"].as_str().unwrap() {
                "frame" => frames += 1,
                "status" | "hello" => {}
                "ack" | "error" | "analysis" => {
                    seen += 1;
                    match m["seq"].as_u64() {
                        Some(s) => *replies.entry(s).or_default() += 1,
                        None => {
                            assert_eq!(m["type"], "error", "{m}");
                            anon += 1;
                        }
                    }
                }
                other => panic!("unexpected message type {other}"),
            }
        }
        (replies, anon, frames)
    });

    for t in &texts {
        sink.send(Message::Text(t.as_str().into())).await.expect("server alive");
    }
    let (replies, anon, _frames) = reader.await.expect("reader");
    for (seq, n) in &expected {
        assert_eq!(replies.get(seq), Some(n), "seq {seq} answered {:?} times", replies.get(seq));
    }
    assert_eq!(replies.len(), expected.len());
    assert_eq!(anon, anonymous);

    // the session still steps and answers
    let mut c = connect(addr, "fuzz").await;
    let s = c.status().await;
    assert!(s["phase"].is_string());
    let mut fresh = connect(addr, "after-fuzz").await;
    assert_ack(&fresh.request("claim_steering", Value::Null).await);
    assert_ack(&fresh.request("start", Value::Null).await);
    fresh.wait_phase("finished", Duration::from_secs(60)).await;
}

pub async fn get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = tokio::net::TcpStream::connect(addr).await.expect("connect");
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.expect("write");
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).await.expect("read");
    let text = String::from_utf8(buf).expect("utf8");
    let (head, body) = text.split_once("\r\n\r\n").expect("http response");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, body.to_string())
}

pub async fn get_json(addr: SocketAddr, path: &str) -> Value {
    let (status, body) = get(addr, path).await;
    assert_eq!(status, 200, "{path}: {body}");
    serde_json::from_str(&body).expect("json body")
}

async fn wait_until(c: &mut Client, t: f64) {
    loop {
        let s = c.status().await;
        if s["t"].as_f64().unwrap() >= t || s["phase"] != "running" {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

fn source(dir: &Path, log: &[SteeringCommand]) -> SourceArgs {
    let scenario = catalog().get("v-channel").expect("fixture").clone();
    let scenario = save_scenario(&scenario, dir.join("v-channel")).expect("save scenario");
    let commands = dir.join("commands.jsonl");
    save_command_log(log, &commands).expect("save log");
    SourceArgs { scenario, catalog: None, commands, until: None, precision: Precision::F64 }
}

/// A live session with mid-run moves; offline replay, compare, run and layers must match it.
pub async fn cli_parity() {
    let addr = serve(4.0).await;
    let mut c = connect(addr, "live").await;
    let barrier = barrier_json();
    let center = barrier["center"].clone();
    assert_ack(&c.request("claim_steering", Value::Null).await);
    assert_ack(&c.request("place_barrier", json!({ "barrier": barrier })).await);
    assert_ack(&c.request("start", Value::Null).await);
    wait_until(&mut c, 1.5).await;
    let moved = json!([
        center[0].as_f64().unwrap() - 2.0,
        center[1].as_f64().unwrap() + 0.5,
        center[2].as_f64().unwrap() + 0.7
    ]);
    assert_ack(&c.request("move_barrier", json!({ "id": "gully", "center": moved, "yaw": 0.2 })).await);
    wait_until(&mut c, 3.0).await;
    assert_ack(&c.request("move_barrier", json!({ "id": "gully", "center": center, "yaw": 0.0 })).await);
    let done = c.wait_phase("finished", Duration::from_secs(60)).await;

    let compare = c.request("run_compare", Value::Null).await;
    assert_eq!(compare["type"], "analysis", "{compare}");
    let log_reply = c.request("get_log", Value::Null).await;
    let log: Vec<SteeringCommand> = serde_json::from_value(log_reply["commands"].clone()).expect("log");
    assert_eq!(log.len(), 4);
    assert!(log[2].t > 0.0 && log[3].t > log[2].t, "moves happened mid-run");

    let dir = tempfile::tempdir().expect("tempdir");
    let src = source(dir.path(), &log);

    let summary = cli::replay_summary(&src).expect("replay");
    assert_eq!(summary["state_hash"], done["state_hash"]);

    let offline = cli::compare(&src, None).expect("compare");
    assert_eq!(offline["area_delta"], compare["area_delta"]);
    assert_eq!(offline["area_with"], compare["area_with"]);
    assert_eq!(offline["area_without"], compare["area_without"]);

    let run = cli::run_headless(&src, &dir.path().join("run")).expect("run");
    assert_eq!(run["state_hash"], done["state_hash"]);
    assert_eq!(run["footprint_area"], compare["area_with"]);
    let written = std::fs::read_to_string(dir.path().join("run").join("commands.jsonl")).unwrap();
    assert_eq!(written.lines().count(), 4);

    // layers served for the live session equal those built from the offline replay
    let live = get_json(addr, "/layers/live").await;
    let session = replay::<f64>(&catalog(), "v-channel", &log, None).expect("replay");
    let mut offline_layers = scenario_layers(session.scenario()).unwrap();
    offline_layers.extend(run_layers(&session).unwrap());
    assert_eq!(live, layers_json("v-channel", &offline_layers));
}

/// Drive a live session through `script`, sending each command once the session clock
/// reaches its time. Returns the live final hash and the hash of replaying the recorded log.
pub async fn live_script(addr: SocketAddr, session: &str, script: &[SteeringCommand]) -> (String, String) {
    let mut c = connect(addr, session).await;
    assert_ack(&c.request("claim_steering", Value::Null).await);
    for cmd in script {
        if cmd.t > 0.0 {
            wait_until(&mut c, cmd.t).await;
        }
        let mut body = serde_json::to_value(&cmd.payload).expect("payload json");
        let kind = body["type"].as_str().expect("tagged payload").to_string();
        body.as_object_mut().unwrap().remove("type");
        assert_ack(&c.request(&kind, body).await);
    }
    let done = c.wait_phase("finished", Duration::from_secs(120)).await;
    let reply = c.request("get_log", Value::Null).await;
    let log: Vec<SteeringCommand> = serde_json::from_value(reply["commands"].clone()).expect("log");
    assert_eq!(log.len(), script.len());
    let offline = replay::<f64>(&catalog(), "v-channel", &log, None).expect("replay");
    (done["state_hash"].as_str().unwrap().to_string(), offline.state_hash())
}
