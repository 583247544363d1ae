//! Operator command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use debris_core::physicalize::{export_stl, tile, FabricationConfig, DEFAULT_Z_SCALE};
use debris_core::risk::{barrier_report, footprint_area, runout_compare, LayerSidecar};
use debris_core::scenario::{load_events, load_scenario, save_events, save_scenario, Scenario, ScenarioCatalog};
use debris_core::session::{read_command_log, replay, save_command_log, Session, SteeringCommand};
use debris_core::terrain::load_dem;
use debris_core::{fixtures, Real};
use serde_json::{json, Value};

use crate::http::{router, AppState};
use crate::hub::{Hub, HubConfig, Precision};
use crate::layers::{self, Layer};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SCENARIO: i32 = 3;
/// `replay --expect-hash` mismatch.
pub const EXIT_MISMATCH: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Scenario(String),
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Scenario(_) => EXIT_SCENARIO,
            CliError::Mismatch(_) => EXIT_MISMATCH,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Scenario(m) => write!(f, "scenario error: {m}"),
            CliError::Mismatch(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{what}: {e}"))
}

fn scenario_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Scenario(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "debris", version, about = "Steerable debris-flow simulation service and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve steering sessions over WebSocket.
    Serve(ServeArgs),
    /// Replay a command log headless and write results.
    Run(RunArgs),
    /// Replay a command log and print the final state summary.
    Replay(ReplayArgs),
    /// Footprints with and without the log's barriers.
    Compare(RunArgs),
    /// Write data layers as ESRI ASCII grids with JSON sidecars.
    ExportLayers(ExportArgs),
    /// Export the terrain as printable STL tiles.
    Fabricate(FabricateArgs),
    /// Write the demo scenarios, events and command logs.
    #[command(hide = true)]
    WriteFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Scenario JSON used for new sessions.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Directory of scenarios (and an optional events.csv).
    #[arg(long, env = "LANDSAR_SCENARIO_DIR")]
    pub scenario_dir: Option<PathBuf>,
    #[arg(long, env = "LANDSAR_PORT", default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Simulated seconds per wall-clock second; 0 runs unthrottled.
    #[arg(long, default_value_t = 1.0)]
    pub pace: f64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Args, Clone)]
pub struct SourceArgs {
    /// Scenario JSON the log starts from.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Extra scenarios reachable through `set_scenario` commands.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Command log, one JSON object per line.
    #[arg(long)]
    pub commands: PathBuf,
    /// Stop at this simulated time instead of the scenario duration.
    #[arg(long)]
    pub until: Option<f64>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Exit with status 1 unless the final state hash equals this.
    #[arg(long)]
    pub expect_hash: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Also export hazard, risk and flow layers from this run.
    #[arg(long)]
    pub commands: Option<PathBuf>,
    #[arg(long)]
    pub until: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FabricateArgs {
    /// Scenario whose terrain is exported.
    #[arg(long, conflicts_with = "dem", required_unless_present = "dem")]
    pub scenario: Option<PathBuf>,
    /// ESRI ASCII elevation grid.
    #[arg(long)]
    pub dem: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub rows: usize,
    #[arg(long, default_value_t = 1)]
    pub cols: usize,
    #[arg(long, default_value_t = DEFAULT_Z_SCALE)]
    pub z_scale: f64,
    /// Model metres per world metre.
    #[arg(long)]
    pub xy_scale: Option<f64>,
    #[arg(long)]
    pub base_mm: Option<f64>,
    /// Print solid instead of hollow with pillars.
    #[arg(long)]
    pub solid: bool,
    #[arg(long)]
    pub shell_mm: Option<f64>,
    #[arg(long)]
    pub pillar_pitch_mm: Option<f64>,
    #[arg(long)]
    pub pillar_radius_mm: Option<f64>,
    /// Printer build volume, `W,D,H` in mm.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub envelope_mm: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Run(a) => {
            let out = a.out.ok_or_else(|| CliError::Config("run needs --out".into()))?;
            let summary = run_headless(&a.source, &out)?;
            print_json(&summary);
            Ok(())
        }
        Command::Replay(a) => {
            let summary = replay_summary(&a.source)?;
            print_json(&summary);
            match a.expect_hash {
                Some(h) if summary["state_hash"] != h.as_str() => {
                    Err(CliError::Mismatch(format!("final hash {} differs from expected {h}", summary["state_hash"])))
                }
                _ => Ok(()),
            }
        }
        Command::Compare(a) => {
            let v = compare(&a.source, a.out.as_deref())?;
            print_json(&v);
            Ok(())
        }
        Command::ExportLayers(a) => export_layers(a),
        Command::Fabricate(a) => fabricate(a),
        Command::WriteFixtures { out } => write_fixtures(&out),
    }
}

fn print_json(v: &Value) {
    use std::io::Write;
    // a closed pipe is not worth a panic
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

pub struct Loaded {
    pub catalog: ScenarioCatalog,
    pub id: String,
    pub log: Vec<SteeringCommand>,
}

pub fn load_source(src: &SourceArgs) -> CliResult<Loaded> {
    let log = read_command_log(&src.commands).map_err(config(&src.commands.display().to_string()))?;
    let (catalog, id) = load_catalog(&src.scenario, src.catalog.as_deref())?;
    Ok(Loaded { catalog, id, log })
}

fn load_catalog(scenario: &Path, extra: Option<&Path>) -> CliResult<(ScenarioCatalog, String)> {
    if !scenario.exists() {
        return Err(CliError::Config(format!("no such scenario file {}", scenario.display())));
    }
    let s = load_scenario(scenario).map_err(scenario_err)?;
    s.validate().map_err(scenario_err)?;
    let mut catalog = match extra {
        Some(dir) => ScenarioCatalog::load_dir(dir).map_err(scenario_err)?,
        None => ScenarioCatalog::new(),
    };
    let id = s.id.clone();
    catalog.insert(s);
    Ok((catalog, id))
}

fn dispatch(src: &SourceArgs, f: impl FnOnce(&dyn SessionView) -> CliResult<Value>) -> CliResult<Value> {
    let l = load_source(src)?;
    match src.precision {
        Precision::F32 => f(&replay::<f32>(&l.catalog, &l.id, &l.log, src.until).map_err(scenario_err)?),
        Precision::F64 => f(&replay::<f64>(&l.catalog, &l.id, &l.log, src.until).map_err(scenario_err)?),
    }
}

/// Precision-erased view of a finished session.
pub trait SessionView {
    fn summary(&self) -> Value;
    fn layers(&self) -> debris_core::Result<Vec<Layer>>;
    fn log(&self) -> &[SteeringCommand];
}

impl<T: Real> SessionView for Session<T> {
    fn summary(&self) -> Value {
        let rho = self.scenario().params.rho;
        let reports: Vec<Value> = self
            .state()
            .barriers()
            .map(|b| match barrier_report(self.contacts(), b, rho) {
                Ok(r) => json!({ "id": b.id, "report": r }),
                Err(_) => json!({ "id": b.id, "report": null }),
            })
            .collect();
        let g = self.history().geometry;
        json!({
            "scenario": self.scenario().id,
            "phase": self.phase(),
            "epoch": self.epoch(),
            "t": self.time(),
            "step": self.state().step_index,
            "state_hash": self.state_hash(),
            "commands": self.log().len(),
            "frames": self.history().len(),
            "footprint_area": footprint_area(&debris_core::risk::footprint(self.history(), self.scenario().params.h_min)),
            "grid": [g.n_cols, g.n_rows],
            "barriers": reports,
        })
    }

    fn layers(&self) -> debris_core::Result<Vec<Layer>> {
        layers::run_layers(self)
    }

    fn log(&self) -> &[SteeringCommand] {
        Session::log(self)
    }
}

/// Replay a log and summarize the final state.
pub fn replay_summary(src: &SourceArgs) -> CliResult<Value> {
    dispatch(src, |s| Ok(s.summary()))
}

/// Replay a log and write summary, log and layers under `out`.
pub fn run_headless(src: &SourceArgs, out: &Path) -> CliResult<Value> {
    dispatch(src, |s| write_run(s, out))
}

fn write_run(s: &dyn SessionView, out: &Path) -> CliResult<Value> {
    std::fs::create_dir_all(out).map_err(config("output directory"))?;
    let v = s.summary();
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&v).expect("json"))
        .map_err(config("summary"))?;
    save_command_log(s.log(), out.join("commands.jsonl")).map_err(config("command log"))?;
    let layers = s.layers().map_err(scenario_err)?;
    layers::export(&out.join("layers"), &layers).map_err(config("layers"))?;
    Ok(v)
}

pub fn compare(src: &SourceArgs, out: Option<&Path>) -> CliResult<Value> {
    let l = load_source(src)?;
    let c = match src.precision {
        Precision::F32 => runout_compare::<f32>(&l.catalog, &l.id, &l.log, src.until),
        Precision::F64 => runout_compare::<f64>(&l.catalog, &l.id, &l.log, src.until),
    }
    .map_err(scenario_err)?;
    if let Some(dir) = out {
        let layers = [("footprint_with", &c.footprint_with), ("footprint_without", &c.footprint_without)]
            .into_iter()
            .map(|(n, r)| Ok(Layer { sidecar: LayerSidecar::new(n, "orange_red", r, false)?, raster: r.clone() }))
            .collect::<debris_core::Result<Vec<_>>>()
            .map_err(scenario_err)?;
        layers::export(dir, &layers).map_err(config("layers"))?;
    }
    Ok(json!({
        "scenario": l.id,
        "area_delta": c.area_delta,
        "area_with": footprint_area(&c.footprint_with),
        "area_without": footprint_area(&c.footprint_without),
        "commands": l.log.len(),
    }))
}

fn export_layers(a: ExportArgs) -> CliResult<()> {
    let (catalog, id) = load_catalog(&a.scenario, None)?;
    let s = catalog.get(&id).expect("just inserted");
    let mut all = layers::scenario_layers(&s).map_err(scenario_err)?;
    if let Some(path) = &a.commands {
        let log = read_command_log(path).map_err(config(&path.display().to_string()))?;
        let session = replay::<f64>(&catalog, &id, &log, a.until).map_err(scenario_err)?;
        all.extend(layers::run_layers(&session).map_err(scenario_err)?);
    }
    layers::export(&a.out, &all).map_err(config("layers"))?;
    let names: Vec<_> = all.iter().map(|l| l.sidecar.layer.clone()).collect();
    print_json(&json!({ "scenario": id, "layers": names }));
    Ok(())
}

fn fabricate(a: FabricateArgs) -> CliResult<()> {
    let terrain = match (&a.scenario, &a.dem) {
        (Some(p), _) => {
            let s: Scenario = load_scenario(p).map_err(scenario_err)?;
            (*s.terrain).clone()
        }
        (None, Some(p)) => load_dem::<f64>(p).map_err(scenario_err)?,
        (None, None) => return Err(CliError::Config("fabricate needs --scenario or --dem".into())),
    };
    let d = FabricationConfig::default();
    let g = terrain.geometry;
    let base = a.base_mm.unwrap_or(d.base_thickness_mm);
    // default scale: each tile fills at most 90% of the build volume
    let fit = {
        let per_tile = (g.width() / a.cols as f64).max(g.height() / a.rows as f64);
        let relief = (terrain.max_height() - terrain.min_height()) * a.z_scale;
        let xy = 0.9 * d.envelope_mm[0].min(d.envelope_mm[1]) / 1000.0 / per_tile;
        let z = (0.9 * d.envelope_mm[2] - base).max(1.0) / 1000.0 / relief.max(1e-9);
        xy.min(z)
    };
    let cfg = FabricationConfig {
        z_scale: a.z_scale,
        xy_scale: a.xy_scale.unwrap_or(fit),
        base_thickness_mm: base,
        hollow: !a.solid,
        shell_mm: a.shell_mm.unwrap_or(d.shell_mm),
        pillar_pitch_mm: a.pillar_pitch_mm.unwrap_or(d.pillar_pitch_mm),
        pillar_radius_mm: a.pillar_radius_mm.unwrap_or(d.pillar_radius_mm),
        rows: a.rows,
        cols: a.cols,
        envelope_mm: match a.envelope_mm.as_deref() {
            Some([w, dd, h]) => [*w, *dd, *h],
            _ => d.envelope_mm,
        },
    };
    cfg.validate().map_err(config("fabrication settings"))?;
    let tiles = tile(&terrain, &cfg).map_err(scenario_err)?;
    std::fs::create_dir_all(&a.out).map_err(config("output directory"))?;
    let mut manifest = Vec::new();
    for (k, t) in tiles.iter().enumerate() {
        let (r, c) = (k / cfg.cols, k % cfg.cols);
        let name = format!("tile_r{r}_c{c}.stl");
        export_stl(t, a.out.join(&name)).map_err(config("stl"))?;
        let (lo, hi) = t.bounds();
        manifest.push(json!({
            "file": name,
            "row": r,
            "col": c,
            "triangles": t.triangles.len(),
            "bytes": 84 + 50 * t.triangles.len(),
            "watertight": t.is_watertight(),
            "volume_mm3": t.signed_volume(),
            "bounds_mm": [lo, hi],
        }));
    }
    let doc = json!({ "config": cfg, "tiles": manifest });
    std::fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&doc).expect("json"))
        .map_err(config("manifest"))?;
    print_json(&doc);
    Ok(())
}

/// Demo scripts for the V-channel: barrier moves while the flow is running.
pub fn demo_scripts() -> Vec<(&'static str, Vec<SteeringCommand>)> {
    use debris_core::session::CommandPayload::*;
    let b = fixtures::v_channel().barrier;
    let c = b.center.to_f64();
    let cmd = |seq, t, payload| SteeringCommand { seq, t, payload };
    vec![
        ("hold", vec![cmd(1, 0.0, PlaceBarrier { barrier: b.clone() }), cmd(2, 0.0, Start)]),
        (
            "sidestep",
            vec![
                cmd(1, 0.0, PlaceBarrier { barrier: b.clone() }),
                cmd(2, 0.0, Start),
                cmd(3, 1.5, MoveBarrier { id: b.id.clone(), center: [c[0] - 2.0, c[1] + 0.5, c[2] + 0.7], yaw: 0.2 }),
                cmd(4, 3.0, MoveBarrier { id: b.id.clone(), center: c, yaw: 0.0 }),
            ],
        ),
        (
            "pull-out",
            vec![
                cmd(1, 0.0, PlaceBarrier { barrier: b.clone() }),
                cmd(2, 0.0, Start),
                cmd(3, 1.0, Pause),
                cmd(
                    4,
                    1.0,
                    SetBarrierParams { id: b.id.clone(), height: Some(2.5), width: None, face_angle: Some(0.1) },
                ),
                cmd(5, 1.0, Start),
                cmd(6, 2.5, MoveBarrier { id: b.id.clone(), center: [2.0, 2.0, 20.0], yaw: 0.0 }),
            ],
        ),
    ]
}

fn write_fixtures(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(config("output directory"))?;
    for s in fixtures::scenarios() {
        save_scenario(&s, out.join(&s.id)).map_err(config("scenario"))?;
    }
    save_events(&fixtures::events(), out.join("events.csv")).map_err(config("events"))?;
    for (name, log) in demo_scripts() {
        save_command_log(&log, out.join("v-channel").join(format!("{name}.jsonl"))).map_err(config("command log"))?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let mut catalog = match &a.scenario_dir {
        Some(dir) => ScenarioCatalog::load_dir(dir).map_err(scenario_err)?,
        None => ScenarioCatalog::new(),
    };
    let default = match &a.scenario {
        Some(p) => {
            let s = load_scenario(p).map_err(scenario_err)?;
            let id = s.id.clone();
            catalog.insert(s);
            id
        }
        None => {
            let mut ids: Vec<_> = catalog.ids().map(str::to_string).collect();
            ids.sort();
            ids.into_iter()
                .next()
                .ok_or_else(|| CliError::Config("no scenarios: pass --scenario or --scenario-dir".into()))?
        }
    };
    for s in catalog.iter() {
        s.validate().map_err(scenario_err)?;
    }
    if !(a.pace >= 0.0) {
        return Err(CliError::Config(format!("pace must be non-negative, got {}", a.pace)));
    }
    let events = match &a.scenario_dir {
        Some(dir) if dir.join("events.csv").exists() => load_events(dir.join("events.csv")).map_err(scenario_err)?,
        _ => Vec::new(),
    };
    let hub = Hub::new(HubConfig { catalog, default_scenario: default, pace: a.pace, precision: a.precision })
        .map_err(scenario_err)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(config("listen address"))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(config("runtime"))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(config("bind"))?;
        tracing::info!("listening on {}", listener.local_addr().map_err(config("bind"))?);
        let app = router(AppState { hub, events: Arc::new(events) });
        axum::serve(listener, app).await.map_err(config("server"))
    })
}
