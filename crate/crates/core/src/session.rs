//! Steerable simulation sessions: phase machine, command log, frames and replay.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Barrier, BarrierContactLog, SimulationState};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::raster::RasterGeometry;
use crate::scalar::Real;
use crate::scenario::{Scenario, ScenarioCatalog};

/// Upper bound on particles carried by one frame.
pub const MAX_FRAME_PARTICLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preparing,
    Running,
    Paused,
    Finished,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Preparing, Phase::Running, Phase::Paused, Phase::Finished];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Preparing => "preparing",
            Phase::Running => "running",
            Phase::Paused => "paused",
            Phase::Finished => "finished",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CommandPayload {
    PlaceBarrier {
        barrier: Barrier<f64>,
    },
    MoveBarrier {
        id: String,
        center: [f64; 3],
        yaw: f64,
    },
    SetBarrierParams {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        face_angle: Option<f64>,
    },
    RemoveBarrier {
        id: String,
    },
    Start,
    Pause,
    Reset,
    SetScenario {
        scenario_id: String,
    },
}

impl CommandPayload {
    pub fn name(&self) -> &'static str {
        match self {
            CommandPayload::PlaceBarrier { .. } => "place_barrier",
            CommandPayload::MoveBarrier { .. } => "move_barrier",
            CommandPayload::SetBarrierParams { .. } => "set_barrier_params",
            CommandPayload::RemoveBarrier { .. } => "remove_barrier",
            CommandPayload::Start => "start",
            CommandPayload::Pause => "pause",
            CommandPayload::Reset => "reset",
            CommandPayload::SetScenario { .. } => "set_scenario",
        }
    }

    pub fn is_barrier_command(&self) -> bool {
        matches!(
            self,
            CommandPayload::PlaceBarrier { .. }
                | CommandPayload::MoveBarrier { .. }
                | CommandPayload::SetBarrierParams { .. }
                | CommandPayload::RemoveBarrier { .. }
        )
    }

    /// Phase after applying the command in `phase`, or `None` if it is not allowed there.
    pub fn next_phase(&self, phase: Phase) -> Option<Phase> {
        use Phase::*;
        match (self, phase) {
            (c, p) if c.is_barrier_command() => Some(p),
            (CommandPayload::Start, Preparing | Paused) => Some(Running),
            (CommandPayload::Pause, Running) => Some(Paused),
            (CommandPayload::Reset, Preparing | Paused | Finished) => Some(Preparing),
            (CommandPayload::SetScenario { .. }, Preparing | Finished) => Some(Preparing),
            _ => None,
        }
    }
}

/// One line of the command log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringCommand {
    pub seq: u64,
    /// Simulation time at which the command took effect.
    pub t: f64,
    #[serde(flatten)]
    pub payload: CommandPayload,
}

/// Sequence numbers must run 1, 2, 3, ... without gaps or repeats.
pub fn validate_log(log: &[SteeringCommand]) -> Result<()> {
    for (i, c) in log.iter().enumerate() {
        let expected = i as u64 + 1;
        if c.seq != expected {
            let what = if i > 0 && c.seq <= log[i - 1].seq { "duplicate or out-of-order" } else { "gap in" };
            return Err(Error::CommandLog(format!("{what} sequence: expected {expected}, found {}", c.seq)));
        }
        if !(c.t >= 0.0) || !c.t.is_finite() {
            return Err(Error::CommandLog(format!("command {} has invalid time {}", c.seq, c.t)));
        }
    }
    Ok(())
}

pub fn parse_command_log(reader: impl BufRead) -> Result<Vec<SteeringCommand>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cmd = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(cmd);
    }
    validate_log(&out)?;
    Ok(out)
}

pub fn read_command_log(path: impl AsRef<Path>) -> Result<Vec<SteeringCommand>> {
    parse_command_log(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_command_log(log: &[SteeringCommand], mut writer: impl Write) -> Result<()> {
    for c in log {
        serde_json::to_writer(&mut writer, c)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_command_log(log: &[SteeringCommand], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_command_log(log, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub particle_count: usize,
    pub max_speed: f64,
    pub overtopped_volume: f64,
}

/// Immutable snapshot published to viewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Bumped on every reset or scenario change.
    pub epoch: u64,
    pub step: u64,
    pub t: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    /// Flow depth per terrain cell, row-major from the south edge.
    pub depth: Vec<f32>,
    /// Decimated particles as `[x, y, z, speed]`.
    pub particles: Vec<[f32; 4]>,
    pub stats: FrameStats,
}

/// Per-frame depths plus running per-cell maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowHistory {
    pub geometry: RasterGeometry<f64>,
    pub times: Vec<f64>,
    pub depth: Vec<Vec<f32>>,
    pub max_depth: Vec<f64>,
    pub max_speed: Vec<f64>,
}

impl FlowHistory {
    pub fn new(geometry: RasterGeometry<f64>) -> Self {
        let n = geometry.len();
        Self { geometry, times: Vec::new(), depth: Vec::new(), max_depth: vec![0.0; n], max_speed: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record<T: Real>(&mut self, state: &SimulationState<T>) -> Vec<f32> {
        let depth = state.depth_field();
        let speed = state.velocity_field();
        let frame: Vec<f32> = depth.values.iter().map(|v| v.as_f64() as f32).collect();
        for (i, (h, v)) in depth.values.iter().zip(&speed.values).enumerate() {
            self.max_depth[i] = self.max_depth[i].max(h.as_f64());
            self.max_speed[i] = self.max_speed[i].max(v.as_f64());
        }
        self.times.push(state.time.as_f64());
        self.depth.push(frame.clone());
        frame
    }
}

pub struct Session<T: Real> {
    catalog: ScenarioCatalog,
    scenario: Arc<Scenario>,
    initial: SimulationState<T>,
    state: SimulationState<T>,
    phase: Phase,
    log: Vec<SteeringCommand>,
    contacts: BTreeMap<String, BarrierContactLog<T>>,
    history: FlowHistory,
    epoch: u64,
    publish_every: u64,
}

impl<T: Real> Session<T> {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let id = scenario.id.clone();
        Self::with_catalog(ScenarioCatalog::single(scenario), &id)
    }

    pub fn with_catalog(catalog: ScenarioCatalog, scenario_id: &str) -> Result<Self> {
        let scenario =
            catalog.get(scenario_id).ok_or_else(|| Error::Scenario(format!("unknown scenario {scenario_id}")))?;
        scenario.validate()?;
        let initial = scenario.build_state::<T>()?;
        let history = FlowHistory::new(scenario.terrain.geometry);
        let publish_every = publish_interval(&scenario);
        Ok(Self {
            catalog,
            scenario,
            state: initial.clone(),
            initial,
            phase: Phase::Preparing,
            log: Vec::new(),
            contacts: BTreeMap::new(),
            history,
            epoch: 0,
            publish_every,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn state(&self) -> &SimulationState<T> {
        &self.state
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn catalog(&self) -> &ScenarioCatalog {
        &self.catalog
    }

    pub fn log(&self) -> &[SteeringCommand] {
        &self.log
    }

    pub fn history(&self) -> &FlowHistory {
        &self.history
    }

    pub fn contacts(&self) -> &BTreeMap<String, BarrierContactLog<T>> {
        &self.contacts
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn time(&self) -> f64 {
        self.state.time.as_f64()
    }

    pub fn state_hash(&self) -> String {
        self.state.state_hash()
    }

    /// Steps between published frames.
    pub fn publish_every(&self) -> u64 {
        self.publish_every
    }

    fn step_of(&self, t: f64) -> u64 {
        (t / self.scenario.params.dt).round().max(0.0) as u64
    }

    fn duration_steps(&self) -> u64 {
        self.step_of(self.scenario.params.duration)
    }

    /// Stamp `payload` with the next sequence number and current time, then apply it.
    pub fn submit(&mut self, payload: CommandPayload) -> Result<SteeringCommand> {
        let cmd = SteeringCommand { seq: self.log.len() as u64 + 1, t: self.time(), payload };
        self.apply(cmd.clone())?;
        Ok(cmd)
    }

    /// Apply a command at the current step boundary. Rejected commands are not logged.
    pub fn apply(&mut self, cmd: SteeringCommand) -> Result<()> {
        let expected = self.log.len() as u64 + 1;
        if cmd.seq != expected {
            return Err(Error::CommandLog(format!("expected sequence {expected}, got {}", cmd.seq)));
        }
        let next = cmd.payload.next_phase(self.phase).ok_or_else(|| Error::BadPhase {
            command: cmd.payload.name().to_string(),
            phase: self.phase.to_string(),
        })?;
        match &cmd.payload {
            CommandPayload::PlaceBarrier { barrier } => {
                self.state.upsert_barrier(barrier.cast())?;
                self.contacts.entry(barrier.id.clone()).or_insert_with(|| BarrierContactLog::new(&barrier.id)).rebase();
            }
            CommandPayload::MoveBarrier { id, center, yaw } => {
                let mut b = self.known_barrier(id)?;
                b.center = Vec3::from_f64(*center);
                b.yaw = T::lit(*yaw);
                self.state.upsert_barrier(b)?;
                self.rebase_contact(id);
            }
            CommandPayload::SetBarrierParams { id, height, width, face_angle } => {
                let mut b = self.known_barrier(id)?;
                if let Some(h) = height {
                    b.height = T::lit(*h);
                }
                if let Some(w) = width {
                    b.width = T::lit(*w);
                }
                if let Some(a) = face_angle {
                    b.face_angle = T::lit(*a);
                }
                self.state.upsert_barrier(b)?;
                self.rebase_contact(id);
            }
            CommandPayload::RemoveBarrier { id } => {
                self.state.remove_barrier(id)?;
                self.contacts.remove(id);
            }
            CommandPayload::Start => {
                if self.history.is_empty() {
                    self.history.record(&self.state);
                }
            }
            CommandPayload::Pause => {}
            CommandPayload::Reset => self.reset_to(self.scenario.clone())?,
            CommandPayload::SetScenario { scenario_id } => {
                let s = self
                    .catalog
                    .get(scenario_id)
                    .ok_or_else(|| Error::Scenario(format!("unknown scenario {scenario_id}")))?;
                s.validate()?;
                self.reset_to(s)?;
            }
        }
        self.phase = next;
        if self.phase == Phase::Running && self.state.step_index >= self.duration_steps() {
            self.phase = Phase::Finished;
        }
        self.log.push(cmd);
        Ok(())
    }

    fn known_barrier(&self, id: &str) -> Result<Barrier<T>> {
        self.state.barrier(id).cloned().ok_or_else(|| Error::UnknownBarrier(id.to_string()))
    }

    fn rebase_contact(&mut self, id: &str) {
        if let Some(c) = self.contacts.get_mut(id) {
            c.rebase();
        }
    }

    fn reset_to(&mut self, scenario: Arc<Scenario>) -> Result<()> {
        if !Arc::ptr_eq(&scenario, &self.scenario) {
            self.initial = scenario.build_state()?;
            self.publish_every = publish_interval(&scenario);
            self.scenario = scenario;
        }
        self.state = self.initial.clone();
        self.contacts.clear();
        self.history = FlowHistory::new(self.scenario.terrain.geometry);
        self.epoch += 1;
        Ok(())
    }

    /// Advance one step; returns a frame when a publish boundary is reached.
    pub fn step_once(&mut self) -> Result<Option<Frame>> {
        if self.phase != Phase::Running {
            return Err(Error::BadPhase { command: "step".into(), phase: self.phase.to_string() });
        }
        self.state.step()?;
        for log in self.contacts.values_mut() {
            log.record(&self.state)?;
        }
        if self.state.step_index >= self.duration_steps() {
            self.phase = Phase::Finished;
        }
        if self.state.step_index.is_multiple_of(self.publish_every) || self.phase == Phase::Finished {
            let depth = self.history.record(&self.state);
            return Ok(Some(self.frame_with(depth)));
        }
        Ok(None)
    }

    /// Step until the clock reaches `t_end` or the session leaves `Running`. Returns steps taken.
    pub fn run_until(&mut self, t_end: f64) -> Result<u64> {
        self.run_until_with(t_end, |_| {})
    }

    pub fn run_until_with(&mut self, t_end: f64, mut on_frame: impl FnMut(Frame)) -> Result<u64> {
        if self.phase != Phase::Running {
            return Err(Error::BadPhase { command: "run".into(), phase: self.phase.to_string() });
        }
        let target = (t_end / self.scenario.params.dt - 1e-6).ceil().max(0.0) as u64;
        let mut taken = 0;
        while self.phase == Phase::Running && self.state.step_index < target {
            if let Some(f) = self.step_once()? {
                on_frame(f);
            }
            taken += 1;
        }
        Ok(taken)
    }

    /// Run to the scenario duration.
    pub fn run_to_end(&mut self) -> Result<u64> {
        let d = self.scenario.params.duration;
        self.run_until(d)
    }

    /// Snapshot of the current state.
    pub fn frame(&self) -> Frame {
        let depth = self.state.depth_field().values.iter().map(|v| v.as_f64() as f32).collect();
        self.frame_with(depth)
    }

    fn frame_with(&self, depth: Vec<f32>) -> Frame {
        let g = self.state.terrain.geometry;
        let n = self.state.particles.len();
        let stride = n.div_ceil(MAX_FRAME_PARTICLES).max(1);
        let offset = if n > MAX_FRAME_PARTICLES { (self.scenario.seed as usize) % stride } else { 0 };
        let particles = self
            .state
            .particles
            .iter()
            .skip(offset)
            .step_by(stride)
            .map(|p| {
                let q = p.position.to_f64();
                [q[0] as f32, q[1] as f32, q[2] as f32, p.velocity.norm().as_f64() as f32]
            })
            .collect();
        Frame {
            epoch: self.epoch,
            step: self.state.step_index,
            t: self.time(),
            n_cols: g.n_cols,
            n_rows: g.n_rows,
            depth,
            particles,
            stats: FrameStats {
                particle_count: n,
                max_speed: self.state.max_speed().as_f64(),
                overtopped_volume: self.contacts.values().fold(0.0, |a, c| a + c.overtopped_volume.as_f64()),
            },
        }
    }
}

fn publish_interval(s: &Scenario) -> u64 {
    ((1.0 / (s.params.frame_rate * s.params.dt)).round() as u64).max(1)
}

/// Rebuild a session from its command log. Each command is applied at the step
/// its time stamp names; afterwards a running session continues to `until`
/// (default: the scenario duration).
pub fn replay<T: Real>(
    catalog: &ScenarioCatalog,
    scenario_id: &str,
    log: &[SteeringCommand],
    until: Option<f64>,
) -> Result<Session<T>> {
    validate_log(log)?;
    let mut session = Session::with_catalog(catalog.clone(), scenario_id)?;
    for cmd in log {
        let at = session.step_of(cmd.t);
        while session.state.step_index < at {
            if session.phase != Phase::Running {
                return Err(Error::CommandLog(format!(
                    "command {} at t={} but the session is {} at t={}",
                    cmd.seq,
                    cmd.t,
                    session.phase,
                    session.time()
                )));
            }
            session.step_once()?;
        }
        if session.state.step_index > at {
            return Err(Error::CommandLog(format!("command {} stamped before the current time", cmd.seq)));
        }
        session.apply(cmd.clone())?;
    }
    if session.phase == Phase::Running {
        session.run_until(until.unwrap_or(session.scenario.params.duration))?;
    }
    Ok(session)
}

pub fn replay_scenario<T: Real>(
    scenario: &Scenario,
    log: &[SteeringCommand],
    until: Option<f64>,
) -> Result<Session<T>> {
    replay(&ScenarioCatalog::single(scenario.clone()), &scenario.id, log, until)
}

/// Same log without barrier commands, renumbered.
pub fn strip_barrier_commands(log: &[SteeringCommand]) -> Vec<SteeringCommand> {
    log.iter()
        .filter(|c| !c.payload.is_barrier_command())
        .enumerate()
        .map(|(i, c)| SteeringCommand { seq: i as u64 + 1, ..c.clone() })
        .collect()
}
