//! Scenario assembly and the data layers behind the exploration views:
//! historical events, rainfall and susceptibility rasters, climate scaling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::engine::{Barrier, BoulderSeeding, Building, Polygon, SimParams, SimulationState};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::raster::Raster;
use crate::scalar::Real;
use crate::terrain::{self, TerrainGrid};

/// Rainfall multipliers offered for the climate-change view.
pub const CLIMATE_MULTIPLIERS: [f64; 3] = [1.5, 2.5, 3.0];

// ---------------------------------------------------------------- events

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventScale {
    Volume(f64),
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandslideEvent {
    pub id: String,
    pub date: NaiveDate,
    pub x: f64,
    pub y: f64,
    pub scale: EventScale,
    pub description: String,
}

const EVENT_HEADER: [&str; 6] = ["id", "date", "x", "y", "scale", "description"];

#[derive(Debug, Deserialize)]
struct EventRow {
    id: String,
    date: String,
    x: f64,
    y: f64,
    scale: String,
    description: String,
}

pub fn parse_events(reader: impl std::io::Read) -> Result<Vec<LandslideEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if headers.iter().map(str::trim).ne(EVENT_HEADER.iter().copied()) {
        return Err(Error::Parse { line: 1, msg: format!("expected header `{}`", EVENT_HEADER.join(",")) });
    }
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record
            .map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: EventRow =
            record.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d")
            .map_err(|_| Error::Parse { line, msg: format!("unparseable date `{}`", row.date) })?;
        let scale = match row.scale.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => EventScale::Volume(v),
            Ok(v) => return Err(Error::Parse { line, msg: format!("numeric scale must be positive, got {v}") }),
            Err(_) if !row.scale.trim().is_empty() => EventScale::Category(row.scale.trim().to_string()),
            Err(_) => return Err(Error::Parse { line, msg: "empty scale".into() }),
        };
        events.push(LandslideEvent { id: row.id, date, x: row.x, y: row.y, scale, description: row.description });
    }
    Ok(events)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<LandslideEvent>> {
    parse_events(std::fs::File::open(path)?)
}

pub fn write_events(events: &[LandslideEvent], writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(EVENT_HEADER).map_err(csv_err)?;
    for e in events {
        let scale = match &e.scale {
            EventScale::Volume(v) => v.to_string(),
            EventScale::Category(c) => c.clone(),
        };
        w.write_record([
            e.id.clone(),
            e.date.format("%Y-%m-%d").to_string(),
            e.x.to_string(),
            e.y.to_string(),
            scale,
            e.description.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_events(events: &[LandslideEvent], path: impl AsRef<Path>) -> Result<()> {
    write_events(events, std::fs::File::create(path)?)
}

/// Inclusive date-range filter preserving order.
pub fn filter_events(events: &[LandslideEvent], start: NaiveDate, end: NaiveDate) -> Result<Vec<LandslideEvent>> {
    if start > end {
        return Err(Error::Domain(format!("inverted range {start}..{end}")));
    }
    Ok(events.iter().filter(|e| e.date >= start && e.date <= end).cloned().collect())
}

/// Whole calendar years `[first, last]`.
pub fn filter_events_by_year(events: &[LandslideEvent], first: i32, last: i32) -> Result<Vec<LandslideEvent>> {
    if first > last {
        return Err(Error::Domain(format!("inverted range {first}..{last}")));
    }
    Ok(events.iter().filter(|e| (first..=last).contains(&e.date.year())).cloned().collect())
}

// ---------------------------------------------------------------- scenario

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingFootprint {
    pub polygon: Vec<[f64; 2]>,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub polygon: Vec<[f64; 2]>,
    pub volume_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub dt: f64,
    /// Magnitude of gravitational acceleration, m/s².
    pub gravity: f64,
    pub rho: f64,
    pub alpha: f64,
    #[serde(rename = "R")]
    pub landing_reduction: f64,
    pub mu_t: f64,
    pub h_min: f64,
    pub w_b: f64,
    pub w_p: f64,
    /// Simulated seconds before the session finishes.
    pub duration: f64,
    pub frame_rate: f64,
    pub eos_stiffness: f64,
    pub drag_coefficient: f64,
    pub grid_spacing: Option<f64>,
    pub particles_per_cell: usize,
    pub boulders: BoulderSeeding<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let sim = SimParams::<f64>::default();
        Self {
            dt: sim.dt,
            gravity: 9.81,
            rho: sim.rho,
            alpha: crate::engine::DEFAULT_ALPHA,
            landing_reduction: crate::risk::DEFAULT_LANDING_REDUCTION,
            mu_t: sim.friction,
            h_min: crate::risk::DEFAULT_H_MIN,
            w_b: 0.5,
            w_p: 0.5,
            duration: 20.0,
            frame_rate: 20.0,
            eos_stiffness: sim.eos_stiffness,
            drag_coefficient: sim.drag_coefficient,
            grid_spacing: None,
            particles_per_cell: sim.particles_per_cell,
            boulders: sim.boulders,
        }
    }
}

impl ScenarioParams {
    pub fn sim_params<T: Real>(&self) -> SimParams<T> {
        let sim = SimParams::<f64> {
            dt: self.dt,
            gravity: Vec3::new(0.0, 0.0, -self.gravity),
            rho: self.rho,
            eos_stiffness: self.eos_stiffness,
            drag_coefficient: self.drag_coefficient,
            friction: self.mu_t,
            grid_spacing: self.grid_spacing,
            particles_per_cell: self.particles_per_cell,
            boulders: self.boulders,
            ..SimParams::default()
        };
        sim.cast()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Scenario(what.to_string()));
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.landing_reduction > 0.0 && self.landing_reduction <= 1.0) {
            return bad("R must lie in (0, 1]");
        }
        if !(self.h_min >= 0.0) {
            return bad("h_min must be non-negative");
        }
        if self.w_b < 0.0 || self.w_p < 0.0 || ((self.w_b + self.w_p) - 1.0).abs() > 1e-9 {
            return bad("w_b and w_p must be non-negative and sum to 1");
        }
        self.sim_params::<f64>().validate().map_err(|e| Error::Scenario(e.to_string()))
    }
}

/// Rainfall intensity raster (mm/h) aligned with the scenario terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainfallRaster {
    pub raster: Raster<f64>,
    pub period: String,
}

impl RainfallRaster {
    pub fn new(raster: Raster<f64>, period: impl Into<String>) -> Result<Self> {
        if raster.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Scenario("rainfall intensities must be non-negative".into()));
        }
        Ok(Self { raster, period: period.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub terrain: Arc<TerrainGrid<f64>>,
    pub buildings: Vec<BuildingFootprint>,
    pub release: Release,
    pub params: ScenarioParams,
    pub rainfall: Option<RainfallRaster>,
    pub susceptibility: Option<Raster<f64>>,
    /// Optional population density raster; when absent the building density stands in.
    pub population: Option<Raster<f64>>,
    pub seed: u64,
    /// Product of all climate multipliers applied to the base scenario.
    #[serde(default = "one")]
    pub rainfall_multiplier: f64,
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    pub fn new(id: impl Into<String>, terrain: TerrainGrid<f64>, release: Release, seed: u64) -> Self {
        Self {
            id: id.into(),
            terrain: Arc::new(terrain),
            buildings: Vec::new(),
            release,
            params: ScenarioParams::default(),
            rainfall: None,
            susceptibility: None,
            population: None,
            seed,
            rainfall_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.release.volume_m3 >= 0.0) {
            return Err(Error::Scenario("release volume must be non-negative".into()));
        }
        let g = self.terrain.geometry;
        for (name, raster) in [
            ("rainfall", self.rainfall.as_ref().map(|r| &r.raster)),
            ("susceptibility", self.susceptibility.as_ref()),
            ("population", self.population.as_ref()),
        ] {
            if let Some(r) = raster {
                if !r.geometry.aligned_with(&g, 1e-9) {
                    return Err(Error::Misaligned(format!("{name} raster does not match the terrain grid")));
                }
            }
        }
        Ok(())
    }

    /// Fresh simulation state: terrain, buildings, released fluid and boulders.
    pub fn build_state<T: Real>(&self) -> Result<SimulationState<T>> {
        let terrain: TerrainGrid<T> = self.terrain.cast();
        let mut state = SimulationState::new(terrain, self.params.sim_params(), self.seed)?;
        for b in &self.buildings {
            let building = Building::extrude(b.polygon.clone(), T::lit(b.height), &state.terrain)?;
            state.add_building(building);
        }
        if self.release.volume_m3 > 0.0 {
            state.init_release(
                &Polygon(self.release.polygon.clone()),
                T::lit(self.release.volume_m3),
                self.params.particles_per_cell,
            )?;
        }
        Ok(state)
    }

    /// Barrier with the scenario's impact coefficient.
    pub fn barrier(
        &self,
        id: &str,
        center: [f64; 3],
        yaw: f64,
        height: f64,
        width: f64,
        thickness: f64,
    ) -> Barrier<f64> {
        let mut b = Barrier::new(id, Vec3::from_f64(center), yaw, height, width, thickness);
        b.alpha = self.params.alpha;
        b
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Scale the climate forcing: release volume and rainfall grow linearly with `multiplier`.
    pub fn scale(&self, multiplier: f64) -> Result<Scenario> {
        if !(multiplier > 0.0) || !multiplier.is_finite() {
            return Err(Error::Domain(format!("multiplier must be positive, got {multiplier}")));
        }
        if multiplier == 1.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.release.volume_m3 *= multiplier;
        if let Some(r) = &mut out.rainfall {
            r.raster = r.raster.map(|v| v * multiplier);
        }
        out.rainfall_multiplier *= multiplier;
        Ok(out)
    }

    /// Building footprint coverage per terrain cell in `[0, 1]`, by 4×4 subsampling.
    pub fn building_density(&self) -> Raster<f64> {
        let g = self.terrain.geometry;
        let mut out = Raster::filled(g, 0.0);
        let polys: Vec<Polygon> = self.buildings.iter().map(|b| Polygon(b.polygon.clone())).collect();
        if polys.is_empty() {
            return out;
        }
        let n = 4;
        for row in 0..g.n_rows {
            for col in 0..g.n_cols {
                let mut hits = 0;
                for a in 0..n {
                    for b in 0..n {
                        let x = g.origin_x + (col as f64 + (a as f64 + 0.5) / n as f64) * g.cell_size;
                        let y = g.origin_y + (row as f64 + (b as f64 + 0.5) / n as f64) * g.cell_size;
                        if polys.iter().any(|p| p.contains(x, y)) {
                            hits += 1;
                        }
                    }
                }
                out.values[g.index(col, row)] = hits as f64 / (n * n) as f64;
            }
        }
        out
    }

    /// Population density normalized to `[0, 1]`; building density when no raster is attached.
    pub fn population_density(&self) -> (Raster<f64>, bool) {
        match &self.population {
            Some(p) => (p.normalized(None), false),
            None => (self.building_density(), true),
        }
    }
}

/// Susceptibility layer and whether it is the slope × rainfall stand-in.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityLayer {
    pub raster: Raster<f64>,
    pub proxy: bool,
}

/// Attached susceptibility normalized to `[0, 1]`, else the proxy
/// `(θ / θ_max) × (rain / rain_max)`.
pub fn susceptibility_layer(scenario: &Scenario, rainfall: &RainfallRaster) -> Result<SusceptibilityLayer> {
    let g = scenario.terrain.geometry;
    if !rainfall.raster.geometry.aligned_with(&g, 1e-9) {
        return Err(Error::Misaligned("rainfall raster does not match the terrain grid".into()));
    }
    if let Some(s) = &scenario.susceptibility {
        if !s.geometry.aligned_with(&g, 1e-9) {
            return Err(Error::Misaligned("susceptibility raster does not match the terrain grid".into()));
        }
        return Ok(SusceptibilityLayer { raster: s.normalized(None), proxy: false });
    }
    let slope = scenario.terrain.slope_field();
    let theta = Raster { geometry: g, values: slope.theta }.normalized(None);
    let rain = rainfall.raster.normalized(None);
    let values = theta.values.iter().zip(&rain.values).map(|(a, b)| a * b).collect();
    Ok(SusceptibilityLayer { raster: Raster { geometry: g, values }, proxy: true })
}

// ---------------------------------------------------------------- files

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    id: String,
    terrain: PathBuf,
    #[serde(default)]
    buildings: Option<PathBuf>,
    release: Release,
    #[serde(default)]
    params: ScenarioParams,
    #[serde(default)]
    rasters: RasterPaths,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Default, Deserialize)]
struct RasterPaths {
    rainfall: Option<PathBuf>,
    susceptibility: Option<PathBuf>,
    population: Option<PathBuf>,
}

/// Load a scenario JSON document; relative paths resolve against its directory.
/// A directory stands for its `scenario.json`.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let joined;
    let mut path = path.as_ref();
    if path.is_dir() {
        joined = path.join("scenario.json");
        path = &joined;
    }
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    let terrain = terrain::load_dem::<f64>(resolve(&file.terrain))?;
    let buildings = match &file.buildings {
        Some(p) => parse_buildings(&std::fs::read_to_string(resolve(p))?)?,
        None => Vec::new(),
    };
    let raster = |p: &Option<PathBuf>| -> Result<Option<Raster<f64>>> {
        p.as_ref().map(|p| Raster::load(resolve(p))).transpose()
    };
    let rainfall = raster(&file.rasters.rainfall)?.map(|r| RainfallRaster::new(r, "scenario")).transpose()?;
    let scenario = Scenario {
        id: file.id,
        terrain: Arc::new(terrain),
        buildings,
        release: file.release,
        params: file.params,
        rainfall,
        susceptibility: raster(&file.rasters.susceptibility)?,
        population: raster(&file.rasters.population)?,
        seed: file.seed,
        rainfall_multiplier: 1.0,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// GeoJSON `FeatureCollection` of `Polygon` features carrying a `height` property.
pub fn parse_buildings(text: &str) -> Result<Vec<BuildingFootprint>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Scenario("buildings: expected a FeatureCollection".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let bad = |msg: &str| Error::Scenario(format!("buildings feature {i}: {msg}"));
        let geom = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(bad("geometry must be a Polygon"));
        }
        let ring = geom
            .get("coordinates")
            .and_then(|c| c.get(0))
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing outer ring"))?;
        let mut polygon: Vec<[f64; 2]> = ring
            .iter()
            .map(|p| match (p.get(0).and_then(Value::as_f64), p.get(1).and_then(Value::as_f64)) {
                (Some(x), Some(y)) => Ok([x, y]),
                _ => Err(bad("bad coordinate")),
            })
            .collect::<Result<_>>()?;
        if polygon.len() > 1 && polygon.first() == polygon.last() {
            polygon.pop();
        }
        let height = f
            .get("properties")
            .and_then(|p| p.get("height"))
            .and_then(Value::as_f64)
            .ok_or_else(|| bad("missing numeric `height` property"))?;
        out.push(BuildingFootprint { polygon, height });
    }
    Ok(out)
}

pub fn buildings_geojson(buildings: &[BuildingFootprint]) -> Value {
    let features: Vec<Value> = buildings
        .iter()
        .map(|b| {
            let mut ring: Vec<Value> = b.polygon.iter().map(|p| serde_json::json!([p[0], p[1]])).collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"height": b.height},
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

/// Write `scenario.json` plus its terrain and rasters into `dir`.
pub fn save_scenario(scenario: &Scenario, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    scenario.terrain.save(dir.join("terrain.asc"))?;
    let mut doc = serde_json::json!({
        "id": scenario.id,
        "terrain": "terrain.asc",
        "release": scenario.release,
        "params": scenario.params,
        "seed": scenario.seed,
    });
    if !scenario.buildings.is_empty() {
        std::fs::write(
            dir.join("buildings.geojson"),
            serde_json::to_string_pretty(&buildings_geojson(&scenario.buildings))?,
        )?;
        doc["buildings"] = Value::from("buildings.geojson");
    }
    let mut rasters = serde_json::Map::new();
    for (name, r) in [
        ("rainfall", scenario.rainfall.as_ref().map(|r| &r.raster)),
        ("susceptibility", scenario.susceptibility.as_ref()),
        ("population", scenario.population.as_ref()),
    ] {
        if let Some(r) = r {
            let file = format!("{name}.asc");
            std::fs::write(dir.join(&file), r.to_ascii())?;
            rasters.insert(name.to_string(), Value::from(file));
        }
    }
    doc["rasters"] = Value::Object(rasters);
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

/// Scenarios addressable by id.
#[derive(Debug, Clone, Default)]
pub struct ScenarioCatalog {
    scenarios: BTreeMap<String, Arc<Scenario>>,
}

impl ScenarioCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(scenario: Scenario) -> Self {
        let mut c = Self::new();
        c.insert(scenario);
        c
    }

    pub fn insert(&mut self, scenario: Scenario) -> Arc<Scenario> {
        let s = Arc::new(scenario);
        self.scenarios.insert(s.id.clone(), s.clone());
        s
    }

    pub fn get(&self, id: &str) -> Option<Arc<Scenario>> {
        self.scenarios.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scenarios.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Scenario>> {
        self.scenarios.values()
    }

    /// Every `*.json` scenario in `dir`, sorted by path.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        let mut c = Self::new();
        for p in paths {
            if p.is_dir() {
                let inner = p.join("scenario.json");
                if inner.exists() {
                    c.insert(load_scenario(inner)?);
                }
            } else if p.extension().is_some_and(|e| e == "json") {
                c.insert(load_scenario(&p)?);
            }
        }
        Ok(c)
    }
}
