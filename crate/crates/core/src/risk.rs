//! Impact, landing velocity, vulnerability and risk; hazard maps, runout
//! comparison, point queries, barrier reports and layer export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Barrier, BarrierContactLog};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Real;
use crate::scenario::{Scenario, ScenarioCatalog};
use crate::session::{replay, strip_barrier_commands, FlowHistory, SteeringCommand};
use crate::terrain::TerrainGrid;

pub const DEFAULT_LANDING_REDUCTION: f64 = 0.8;
pub const DEFAULT_H_MIN: f64 = 0.05;

fn non_negative(v: f64, name: &str) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be non-negative, got {v}")))
    }
}

fn unit(v: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Impact force `F = α ρ v² h₀ w`, newtons.
pub fn impact_force(alpha: f64, rho: f64, v: f64, h0: f64, w: f64) -> Result<f64> {
    for (x, n) in [(alpha, "alpha"), (rho, "rho"), (v, "v"), (h0, "h0"), (w, "w")] {
        non_negative(x, n)?;
    }
    Ok(alpha * rho * v * v * h0 * w)
}

/// Velocity after landing, `v_i = R cos θ v_r`.
pub fn landing_velocity(v_r: f64, r: f64, theta: f64) -> Result<f64> {
    non_negative(v_r, "v_r")?;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("R must lie in (0, 1], got {r}")));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0, pi/2], got {theta}")));
    }
    // cos(π/2) is 6e-17 in floating point
    let c = if theta == std::f64::consts::FRAC_PI_2 { 0.0 } else { theta.cos() };
    Ok(r * c * v_r)
}

/// `V = w_b D_b + w_p D_p`.
pub fn vulnerability(d_b: f64, d_p: f64, w_b: f64, w_p: f64) -> Result<f64> {
    unit(d_b, "D_b")?;
    unit(d_p, "D_p")?;
    if w_b < 0.0 || w_p < 0.0 || (w_b + w_p - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights must be non-negative and sum to 1, got {w_b} + {w_p}")));
    }
    Ok(w_b * d_b + w_p * d_p)
}

pub fn risk(hazard: f64, vulnerability: f64) -> Result<f64> {
    unit(hazard, "hazard")?;
    unit(vulnerability, "vulnerability")?;
    Ok(hazard * vulnerability)
}

/// Where the landing coefficient is applied in the hazard map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attenuation {
    /// Only cells downstream of a barrier that was overtopped.
    #[default]
    DownstreamOfBarriers,
    WholePath,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardOptions {
    pub alpha: f64,
    pub rho: f64,
    pub landing_reduction: f64,
    pub attenuation: Attenuation,
    /// Force mapped to 1; defaults to the raster maximum.
    pub cap: Option<f64>,
}

impl HazardOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            alpha: s.params.alpha,
            rho: s.params.rho,
            landing_reduction: s.params.landing_reduction,
            attenuation: Attenuation::default(),
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardSample {
    pub cell: usize,
    pub v: f64,
    pub h0: f64,
    pub w: f64,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardMap {
    /// Impact force, newtons.
    pub force: Raster<f64>,
    /// Force normalized to `[0, 1]`.
    pub normalized: Raster<f64>,
    /// Wet cells only.
    pub samples: Vec<HazardSample>,
    pub colormap: &'static str,
}

/// A barrier together with whether the flow went over it.
#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub barrier: Barrier<f64>,
    pub overtopped: bool,
}

impl BarrierOutcome {
    pub fn from_contacts<T: Real>(
        barriers: impl IntoIterator<Item = Barrier<T>>,
        contacts: &BTreeMap<String, BarrierContactLog<T>>,
    ) -> Vec<Self> {
        barriers
            .into_iter()
            .map(|b| {
                let overtopped = contacts.get(&b.id).is_some_and(|c| c.overtopped_volume > T::zero());
                BarrierOutcome { barrier: b.cast(), overtopped }
            })
            .collect()
    }

    /// Strictly past the downstream face.
    pub fn is_downstream(&self, x: f64, y: f64) -> bool {
        let local = self.barrier.to_local(crate::linalg::Vec3::new(x, y, self.barrier.center.z));
        local.x > self.barrier.thickness / 2.0
    }
}

pub fn hazard_map(
    history: &FlowHistory,
    terrain: &TerrainGrid<f64>,
    barriers: &[BarrierOutcome],
    opts: &HazardOptions,
) -> Result<HazardMap> {
    if history.is_empty() {
        return Err(Error::Domain("hazard map needs at least one recorded frame".into()));
    }
    let g = history.geometry;
    if !g.aligned_with(&terrain.geometry, 1e-9) {
        return Err(Error::Misaligned("history does not match the terrain grid".into()));
    }
    let slope = terrain.slope_field();
    let w = g.cell_size;
    let mut force = Raster::filled(g, 0.0);
    let mut samples = Vec::new();
    for row in 0..g.n_rows {
        for col in 0..g.n_cols {
            let i = g.index(col, row);
            let h0 = history.max_depth[i];
            let mut v = history.max_speed[i];
            if h0 <= 0.0 {
                continue;
            }
            let (x, y) = g.center(col, row);
            let attenuate = match opts.attenuation {
                Attenuation::Off => false,
                Attenuation::WholePath => true,
                Attenuation::DownstreamOfBarriers => barriers.iter().any(|b| b.overtopped && b.is_downstream(x, y)),
            };
            if attenuate {
                let theta = slope.theta[i].clamp(0.0, std::f64::consts::FRAC_PI_2);
                v = landing_velocity(v, opts.landing_reduction, theta)?;
            }
            let f = impact_force(opts.alpha, opts.rho, v, h0, w)?;
            force.values[i] = f;
            samples.push(HazardSample { cell: i, v, h0, w, force: f });
        }
    }
    let normalized = force.normalized(opts.cap);
    Ok(HazardMap { force, normalized, samples, colormap: "red_yellow_green" })
}

/// Per-cell vulnerability from building coverage and population density.
/// The flag reports whether building coverage stood in for population.
pub fn vulnerability_raster(scenario: &Scenario) -> Result<(Raster<f64>, bool)> {
    let d_b = scenario.building_density();
    let (d_p, proxy) = scenario.population_density();
    let (w_b, w_p) = (scenario.params.w_b, scenario.params.w_p);
    let values = d_b
        .values
        .iter()
        .zip(&d_p.values)
        .map(|(&b, &p)| vulnerability(b.clamp(0.0, 1.0), p.clamp(0.0, 1.0), w_b, w_p))
        .collect::<Result<_>>()?;
    Ok((Raster { geometry: d_b.geometry, values }, proxy))
}

/// Elementwise `hazard × vulnerability`.
pub fn risk_raster(hazard: &Raster<f64>, vulnerability: &Raster<f64>) -> Result<Raster<f64>> {
    hazard.ensure_aligned(vulnerability, "vulnerability")?;
    let values = hazard.values.iter().zip(&vulnerability.values).map(|(&h, &v)| risk(h, v)).collect::<Result<_>>()?;
    Ok(Raster { geometry: hazard.geometry, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskLayers {
    pub hazard: HazardMap,
    pub vulnerability: Raster<f64>,
    pub risk: Raster<f64>,
    pub footprint: Raster<f64>,
    pub population_proxy: bool,
}

pub fn risk_layers(
    scenario: &Scenario,
    history: &FlowHistory,
    barriers: &[BarrierOutcome],
    opts: &HazardOptions,
) -> Result<RiskLayers> {
    let hazard = hazard_map(history, &scenario.terrain, barriers, opts)?;
    let (vulnerability, population_proxy) = vulnerability_raster(scenario)?;
    let risk = risk_raster(&hazard.normalized, &vulnerability)?;
    let footprint = footprint(history, scenario.params.h_min);
    Ok(RiskLayers { hazard, vulnerability, risk, footprint, population_proxy })
}

/// 1 where the maximum depth over the run reached `h_min`, else 0.
pub fn footprint(history: &FlowHistory, h_min: f64) -> Raster<f64> {
    Raster {
        geometry: history.geometry,
        values: history.max_depth.iter().map(|&h| if h >= h_min && h > 0.0 { 1.0 } else { 0.0 }).collect(),
    }
}

pub fn footprint_area(mask: &Raster<f64>) -> f64 {
    mask.values.iter().filter(|&&v| v > 0.0).count() as f64 * mask.geometry.cell_area()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunoutComparison {
    pub footprint_with: Raster<f64>,
    pub footprint_without: Raster<f64>,
    /// Footprint area without barriers minus with them, m².
    pub area_delta: f64,
}

/// Replay `log` once as recorded and once without its barrier commands.
pub fn runout_compare<T: Real>(
    catalog: &ScenarioCatalog,
    scenario_id: &str,
    log: &[SteeringCommand],
    until: Option<f64>,
) -> Result<RunoutComparison> {
    let with = replay::<T>(catalog, scenario_id, log, until)?;
    let without = replay::<T>(catalog, scenario_id, &strip_barrier_commands(log), until)?;
    let h_min = with.scenario().params.h_min;
    let footprint_with = footprint(with.history(), h_min);
    let footprint_without = footprint(without.history(), without.scenario().params.h_min);
    let area_delta = footprint_area(&footprint_without) - footprint_area(&footprint_with);
    Ok(RunoutComparison { footprint_with, footprint_without, area_delta })
}

/// Flow depth at the cell containing `(x, y)` for every recorded frame.
pub fn query_point(history: &FlowHistory, x: f64, y: f64) -> Result<Vec<(f64, f64)>> {
    let g = history.geometry;
    let (c, r) = g.cell_of(x, y).ok_or_else(|| Error::Domain(format!("point ({x}, {y}) lies outside the terrain")))?;
    let i = g.index(c, r);
    Ok(history.times.iter().zip(&history.depth).map(|(&t, d)| (t, d[i] as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub peak_impact_force: f64,
    pub peak_flow_rate: f64,
    pub overtopped_volume: f64,
    /// Approach speed, depth and wet face width at the peak force.
    pub impact_speed: f64,
    pub impact_depth: f64,
    pub impact_width: f64,
    pub max_approach_speed: f64,
    pub max_face_depth: f64,
    pub max_face_width: f64,
}

pub fn barrier_report<T: Real>(
    contacts: &BTreeMap<String, BarrierContactLog<T>>,
    barrier: &Barrier<T>,
    rho: f64,
) -> Result<BarrierReport> {
    let log = contacts.get(&barrier.id).ok_or_else(|| Error::UnknownBarrier(barrier.id.clone()))?;
    let v = log.impact_speed.as_f64();
    let h0 = log.impact_depth.as_f64();
    let w = log.impact_width.as_f64();
    Ok(BarrierReport {
        peak_impact_force: impact_force(barrier.alpha.as_f64(), rho, v, h0, w)?,
        peak_flow_rate: log.peak_flow_rate.as_f64(),
        overtopped_volume: log.overtopped_volume.as_f64(),
        impact_speed: v,
        impact_depth: h0,
        impact_width: w,
        max_approach_speed: log.max_approach_speed.as_f64(),
        max_face_depth: log.max_face_depth.as_f64(),
        max_face_width: log.face_width.as_f64(),
    })
}

/// Colormap tags understood by the viewer.
pub const COLORMAPS: [&str; 4] = ["blue_red", "orange_red", "purple", "red_yellow_green"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSidecar {
    pub layer: String,
    pub colormap: String,
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub proxy: bool,
}

impl LayerSidecar {
    pub fn new(layer: &str, colormap: &str, raster: &Raster<f64>, proxy: bool) -> Result<Self> {
        if !COLORMAPS.contains(&colormap) {
            return Err(Error::Domain(format!("unknown colormap {colormap}")));
        }
        Ok(Self {
            layer: layer.to_string(),
            colormap: colormap.to_string(),
            min: raster.min(),
            max: raster.max(),
            proxy,
        })
    }
}

/// Write `<name>.asc` and `<name>.json` into `dir`.
pub fn export_layer(dir: impl AsRef<Path>, raster: &Raster<f64>, sidecar: &LayerSidecar) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let asc = dir.join(format!("{}.asc", sidecar.layer));
    std::fs::write(&asc, raster.to_ascii())?;
    std::fs::write(dir.join(format!("{}.json", sidecar.layer)), serde_json::to_string_pretty(sidecar)?)?;
    Ok(asc)
}

pub fn read_layer(dir: impl AsRef<Path>, layer: &str) -> Result<(Raster<f64>, LayerSidecar)> {
    let dir = dir.as_ref();
    let raster = Raster::load(dir.join(format!("{layer}.asc")))?;
    let sidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{layer}.json")))?)?;
    Ok((raster, sidecar))
}
