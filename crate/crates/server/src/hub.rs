//! Session hosting. Each session is owned by one steering thread; connections talk
//! to it through a command queue and read frames from a latest-value channel.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use debris_core::risk::{barrier_report, footprint_area, query_point, runout_compare};
use debris_core::scenario::ScenarioCatalog;
use debris_core::session::{CommandPayload, Phase, Session};
use debris_core::Real;
use parking_lot::Mutex;
use serde_json::json;
use tokio::sync::{mpsc, oneshot, watch};

use crate::layers::{self, Layer};
use crate::protocol::{self, raster_json, ErrorCode, Request};

/// Outbound text messages for one connection.
pub type Outbox = mpsc::UnboundedSender<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub catalog: ScenarioCatalog,
    /// Scenario new sessions start from.
    pub default_scenario: String,
    /// Simulated seconds per wall second; 0 runs as fast as possible.
    pub pace: f64,
    pub precision: Precision,
}

/// A serialized frame shared by every subscriber.
#[derive(Debug, Clone)]
pub struct Published {
    pub epoch: u64,
    pub t: f64,
    pub text: Arc<str>,
}

pub enum Input {
    Request { conn: u64, seq: Option<u64>, request: Request, out: Outbox },
    Layers { reply: oneshot::Sender<(String, Vec<Layer>)> },
    Disconnect { conn: u64 },
}

#[derive(Clone)]
pub struct SessionHandle {
    pub id: String,
    tx: Sender<Input>,
    frames: Arc<watch::Sender<Option<Published>>>,
    status: Arc<watch::Sender<Arc<str>>>,
}

impl SessionHandle {
    pub fn send(&self, input: Input) {
        // the loop only exits when every handle is gone
        let _ = self.tx.send(input);
    }

    pub fn frames(&self) -> watch::Receiver<Option<Published>> {
        self.frames.subscribe()
    }

    pub fn status(&self) -> watch::Receiver<Arc<str>> {
        self.status.subscribe()
    }

    pub async fn layers(&self) -> Option<(String, Vec<Layer>)> {
        let (reply, rx) = oneshot::channel();
        self.send(Input::Layers { reply });
        rx.await.ok()
    }
}

pub struct Hub {
    pub config: HubConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    next_conn: AtomicU64,
}

impl Hub {
    pub fn new(config: HubConfig) -> debris_core::Result<Arc<Self>> {
        if config.catalog.get(&config.default_scenario).is_none() {
            return Err(debris_core::Error::Scenario(format!("unknown scenario {}", config.default_scenario)));
        }
        Ok(Arc::new(Self { config, sessions: Mutex::new(HashMap::new()), next_conn: AtomicU64::new(1) }))
    }

    pub fn connection_id(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    pub fn existing(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().get(id).cloned()
    }

    /// The session called `id`, started from the default scenario on first use.
    pub fn session(&self, id: &str) -> debris_core::Result<SessionHandle> {
        let mut map = self.sessions.lock();
        if let Some(h) = map.get(id) {
            return Ok(h.clone());
        }
        let h = match self.config.precision {
            Precision::F32 => spawn::<f32>(id, &self.config)?,
            Precision::F64 => spawn::<f64>(id, &self.config)?,
        };
        map.insert(id.to_string(), h.clone());
        Ok(h)
    }
}

fn spawn<T: Real>(id: &str, cfg: &HubConfig) -> debris_core::Result<SessionHandle> {
    let session = Session::<T>::with_catalog(cfg.catalog.clone(), &cfg.default_scenario)?;
    let (tx, rx) = crossbeam_channel::unbounded();
    let (frames, _) = watch::channel(None);
    let (status, _) = watch::channel::<Arc<str>>(Arc::from(""));
    let handle = SessionHandle { id: id.to_string(), tx, frames: Arc::new(frames), status: Arc::new(status) };
    let mut sl = SteeringLoop {
        id: id.to_string(),
        initial_scenario: cfg.default_scenario.clone(),
        session,
        holder: None,
        frames: handle.frames.clone(),
        status: handle.status.clone(),
        pace: cfg.pace,
        clock: None,
    };
    sl.publish_status();
    thread::Builder::new().name(format!("steer-{id}")).spawn(move || sl.run(rx)).map_err(debris_core::Error::Io)?;
    Ok(handle)
}

struct SteeringLoop<T: Real> {
    id: String,
    initial_scenario: String,
    session: Session<T>,
    holder: Option<u64>,
    frames: Arc<watch::Sender<Option<Published>>>,
    status: Arc<watch::Sender<Arc<str>>>,
    pace: f64,
    /// Wall clock and simulation time when pacing last restarted.
    clock: Option<(Instant, f64)>,
}

impl<T: Real> SteeringLoop<T> {
    fn run(&mut self, rx: Receiver<Input>) {
        loop {
            if self.session.phase() != Phase::Running {
                self.clock = None;
                match rx.recv() {
                    Ok(input) => self.guarded(input),
                    Err(_) => return,
                }
                continue;
            }
            loop {
                match rx.try_recv() {
                    Ok(input) => self.guarded(input),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }
            if self.session.phase() != Phase::Running {
                continue;
            }
            if let Some(wait) = self.ahead_of_wall_clock() {
                match rx.recv_timeout(wait) {
                    Ok(input) => self.guarded(input),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return,
                }
                continue;
            }
            if catch_unwind(AssertUnwindSafe(|| self.step())).is_err() {
                let _ = self.session.submit(CommandPayload::Pause);
                self.publish_status_with(Some("internal error while stepping".into()));
            }
        }
    }

    /// A panic while handling one input must not take the session down.
    fn guarded(&mut self, input: Input) {
        let reply = match &input {
            Input::Request { seq, out, .. } => Some((*seq, out.clone())),
            _ => None,
        };
        if catch_unwind(AssertUnwindSafe(|| self.handle(input))).is_err() {
            tracing::error!(session = %self.id, "request handler panicked");
            if let Some((seq, out)) = reply {
                let _ = out.send(protocol::error(ErrorCode::Internal, seq, "internal error"));
            }
        }
    }

    fn ahead_of_wall_clock(&mut self) -> Option<Duration> {
        if self.pace <= 0.0 {
            return None;
        }
        let now = Instant::now();
        let (start, t0) = *self.clock.get_or_insert((now, self.session.time()));
        let due = (self.session.time() - t0) / self.pace;
        let elapsed = now.duration_since(start).as_secs_f64();
        (due > elapsed).then(|| Duration::from_secs_f64((due - elapsed).min(0.05)))
    }

    fn step(&mut self) {
        match self.session.step_once() {
            Ok(Some(frame)) => {
                self.publish_frame(&frame);
                if self.session.phase() == Phase::Finished {
                    self.publish_status();
                }
            }
            Ok(None) => {}
            Err(e) => {
                // a failed step leaves the state untouched; stop instead of retrying forever
                let _ = self.session.submit(CommandPayload::Pause);
                tracing::warn!(session = %self.id, "step failed: {e}");
                self.publish_status_with(Some(e.to_string()));
            }
        }
    }

    fn publish_frame(&self, frame: &debris_core::session::Frame) {
        if self.frames.receiver_count() == 0 {
            return;
        }
        let text: Arc<str> = Arc::from(protocol::frame(&self.id, frame));
        self.frames.send_replace(Some(Published { epoch: frame.epoch, t: frame.t, text }));
    }

    fn status_body(&self) -> serde_json::Value {
        let barriers: Vec<_> = self.session.state().barriers().map(|b| b.cast::<f64>()).collect();
        json!({
            "session": self.id,
            "scenario": self.session.scenario().id,
            "phase": self.session.phase(),
            "epoch": self.session.epoch(),
            "t": self.session.time(),
            "step": self.session.state().step_index,
            "holder": self.holder,
            "barriers": barriers,
            "commands": self.session.log().len(),
        })
    }

    fn publish_status(&self) {
        self.publish_status_with(None);
    }

    fn publish_status_with(&self, fault: Option<String>) {
        let mut body = self.status_body();
        if let Some(f) = fault {
            body["fault"] = json!(f);
        }
        self.status.send_replace(Arc::from(protocol::message("status", body)));
    }

    fn handle(&mut self, input: Input) {
        match input {
            Input::Request { conn, seq, request, out } => {
                let changed = self.request(conn, seq, request, &out);
                if changed {
                    self.publish_status();
                }
            }
            Input::Layers { reply } => {
                let mut all = layers::scenario_layers(self.session.scenario()).unwrap_or_default();
                match layers::run_layers(&self.session) {
                    Ok(run) => all.extend(run),
                    Err(e) => tracing::warn!(session = %self.id, "run layers: {e}"),
                }
                let _ = reply.send((self.session.scenario().id.clone(), all));
            }
            Input::Disconnect { conn } => {
                if self.holder == Some(conn) {
                    self.holder = None;
                    self.publish_status();
                }
            }
        }
    }

    /// Answer one request; returns whether session status changed.
    fn request(&mut self, conn: u64, seq: Option<u64>, request: Request, out: &Outbox) -> bool {
        let reply = |text: String| {
            let _ = out.send(text);
        };
        let fail = |code: ErrorCode, msg: &str| {
            let _ = out.send(protocol::error(code, seq, msg));
        };
        match request {
            Request::Command(payload) => {
                if self.holder != Some(conn) {
                    fail(ErrorCode::NotSteering, "claim the steering lock before sending commands");
                    return false;
                }
                let epoch = self.session.epoch();
                match self.session.submit(payload) {
                    Ok(cmd) => {
                        reply(protocol::ack(
                            seq,
                            json!({ "command": cmd.payload.name(), "command_seq": cmd.seq, "t": cmd.t, "phase": self.session.phase() }),
                        ));
                        let fresh = self.session.epoch() != epoch;
                        let started =
                            matches!(cmd.payload, CommandPayload::Start) && self.session.state().step_index == 0;
                        if fresh || started {
                            self.publish_frame(&self.session.frame());
                        }
                        true
                    }
                    Err(e) => {
                        fail(ErrorCode::from_core(&e), &e.to_string());
                        false
                    }
                }
            }
            Request::ClaimSteering => match self.holder {
                Some(h) if h != conn => {
                    fail(ErrorCode::LockHeld, "another connection is steering");
                    false
                }
                _ => {
                    self.holder = Some(conn);
                    reply(protocol::ack(seq, json!({ "steering": true })));
                    true
                }
            },
            Request::ReleaseSteering => {
                if self.holder == Some(conn) {
                    self.holder = None;
                    reply(protocol::ack(seq, json!({ "steering": false })));
                    true
                } else {
                    fail(ErrorCode::NotSteering, "this connection does not hold the lock");
                    false
                }
            }
            Request::QueryPoint { x, y } => {
                match query_point(self.session.history(), x, y) {
                    Ok(series) => {
                        reply(protocol::analysis("query_point", seq, json!({ "x": x, "y": y, "series": series })))
                    }
                    Err(e) => fail(ErrorCode::OutOfBounds, &e.to_string()),
                }
                false
            }
            Request::BarrierReport { id } => {
                let rho = self.session.scenario().params.rho;
                let result = self
                    .session
                    .state()
                    .barrier(&id)
                    .ok_or_else(|| debris_core::Error::UnknownBarrier(id.clone()))
                    .and_then(|b| barrier_report(self.session.contacts(), b, rho));
                match result {
                    Ok(r) => reply(protocol::analysis("barrier_report", seq, json!({ "id": id, "report": r }))),
                    Err(e) => fail(ErrorCode::from_core(&e), &e.to_string()),
                }
                false
            }
            Request::RunCompare { until } => {
                // replays take seconds; keep the steering loop responsive
                let catalog = self.session.catalog().clone();
                let scenario = self.initial_scenario.clone();
                let log = self.session.log().to_vec();
                let out = out.clone();
                let spawned = thread::Builder::new().name("compare".into()).spawn(move || {
                    let result = catch_unwind(|| runout_compare::<T>(&catalog, &scenario, &log, until));
                    let msg = match result
                        .unwrap_or_else(|_| Err(debris_core::Error::Domain("comparison panicked".into())))
                    {
                        Ok(c) => protocol::analysis(
                            "run_compare",
                            seq,
                            json!({
                                "area_delta": c.area_delta,
                                "area_with": footprint_area(&c.footprint_with),
                                "area_without": footprint_area(&c.footprint_without),
                                "footprint_with": raster_json(&c.footprint_with),
                                "footprint_without": raster_json(&c.footprint_without),
                                "commands": log.len(),
                            }),
                        ),
                        Err(e) => protocol::error(ErrorCode::from_core(&e), seq, &e.to_string()),
                    };
                    let _ = out.send(msg);
                });
                if let Err(e) = spawned {
                    fail(ErrorCode::Internal, &e.to_string());
                }
                false
            }
            Request::Status => {
                let mut body = self.status_body();
                body["state_hash"] = json!(self.session.state_hash());
                reply(protocol::ack(seq, body));
                false
            }
            Request::GetLog => {
                reply(protocol::ack(seq, json!({ "scenario": self.initial_scenario, "commands": self.session.log() })));
                false
            }
        }
    }
}
