#![allow(dead_code)]

pub mod checks;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use debris_core::fixtures;
use debris_core::scenario::ScenarioCatalog;
use debris_server::http::{router, AppState};
use debris_server::hub::{Hub, HubConfig, Precision};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn catalog() -> ScenarioCatalog {
    let mut c = ScenarioCatalog::new();
    for s in fixtures::scenarios() {
        c.insert(s);
    }
    c
}

/// Serve the fixture catalog on an ephemeral port.
pub async fn serve(pace: f64) -> SocketAddr {
    serve_with(HubConfig { catalog: catalog(), default_scenario: "v-channel".into(), pace, precision: Precision::F64 })
        .await
}

pub async fn serve_with(config: HubConfig) -> SocketAddr {
    let hub = Hub::new(config).expect("hub");
    let app = router(AppState { hub, events: Arc::new(fixtures::events()) });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
    let addr = listener.local_addr().expect("addr");
    tokio::spawn(async move { axum::serve(listener, app).await.expect("serve") });
    addr
}

pub struct Client {
    pub ws: Ws,
    pub connection: u64,
    next_seq: u64,
    /// Frames and status messages seen while waiting for replies.
    pub seen: Vec<Value>,
}

pub async fn connect(addr: SocketAddr, session: &str) -> Client {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session/{session}")).await.expect("connect");
    let mut c = Client { ws, connection: 0, next_seq: 1, seen: Vec::new() };
    let hello = c.next_json().await;
    assert_eq!(hello["type"], "hello");
    c.connection = hello["connection"].as_u64().expect("connection id");
    c
}

impl Client {
    pub async fn next_json(&mut self) -> Value {
        self.next_json_within(Duration::from_secs(30)).await.expect("message before timeout")
    }

    pub async fn next_json_within(&mut self, wait: Duration) -> Option<Value> {
        loop {
            let msg = tokio::time::timeout(wait, self.ws.next()).await.ok()??.expect("websocket");
            if let Message::Text(t) = msg {
                return Some(serde_json::from_str(t.as_str()).expect("server sends JSON"));
            }
        }
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::Text(text.into())).await.expect("send");
    }

    /// Send `{v:1,type,seq,...body}` and wait for the reply carrying that seq.
    pub async fn request(&mut self, kind: &str, body: Value) -> Value {
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut msg = body;
        if msg.is_null() {
            msg = json!({});
        }
        msg["v"] = json!(1);
        msg["type"] = json!(kind);
        msg["seq"] = json!(seq);
        self.send_raw(&msg.to_string()).await;
        loop {
            let m = self.next_json().await;
            if m["seq"] == json!(seq) {
                return m;
            }
            self.seen.push(m);
        }
    }

    pub async fn status(&mut self) -> Value {
        let r = self.request("status", Value::Null).await;
        assert_eq!(r["type"], "ack", "{r}");
        r
    }

    /// Poll status until the session reaches `phase`.
    pub async fn wait_phase(&mut self, phase: &str, limit: Duration) -> Value {
        let start = std::time::Instant::now();
        loop {
            let s = self.status().await;
            if s["phase"] == phase {
                return s;
            }
            assert!(start.elapsed() < limit, "phase {phase} not reached: {s}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

pub fn code(reply: &Value) -> &str {
    assert_eq!(reply["type"], "error", "expected an error, got {reply}");
    reply["code"].as_str().expect("error code")
}

pub fn assert_ack(reply: &Value) {
    assert_eq!(reply["type"], "ack", "expected an ack, got {reply}");
}

pub fn barrier_json() -> Value {
    let debris_core::session::CommandPayload::PlaceBarrier { barrier } = fixtures::v_channel_barrier_command() else {
        unreachable!()
    };
    serde_json::to_value(barrier).expect("barrier json")
}
