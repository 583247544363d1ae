//! Named raster layers for a scenario, with or without a finished run.

use std::path::Path;

use debris_core::raster::Raster;
use debris_core::risk::{risk_layers, BarrierOutcome, HazardOptions, LayerSidecar};
use debris_core::scenario::{susceptibility_layer, Scenario, CLIMATE_MULTIPLIERS};
use debris_core::session::Session;
use debris_core::{risk, Real, Result};
use serde_json::{json, Value};

use crate::protocol::raster_json;

#[derive(Debug, Clone)]
pub struct Layer {
    pub sidecar: LayerSidecar,
    pub raster: Raster<f64>,
}

impl Layer {
    fn new(name: &str, colormap: &str, raster: Raster<f64>, proxy: bool) -> Result<Self> {
        Ok(Self { sidecar: LayerSidecar::new(name, colormap, &raster, proxy)?, raster })
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(&self.sidecar).expect("sidecar serializes");
        v["raster"] = raster_json(&self.raster);
        v
    }
}

/// Layers that need no simulation: susceptibility, its climate variants, vulnerability.
pub fn scenario_layers(s: &Scenario) -> Result<Vec<Layer>> {
    let mut out = Vec::new();
    if let Some(rain) = &s.rainfall {
        let base = susceptibility_layer(s, rain)?;
        let proxy = base.proxy;
        out.push(Layer::new("susceptibility", "blue_red", base.raster.clone(), proxy)?);
        // climate variants share one scale so that stronger rain reads hotter
        let top = CLIMATE_MULTIPLIERS.iter().copied().fold(1.0, f64::max);
        for m in CLIMATE_MULTIPLIERS {
            let scaled = base.raster.map(|v| v * m / top);
            out.push(Layer::new(&format!("susceptibility_x{m}"), "blue_red", scaled, proxy)?);
        }
    }
    let (vulnerability, proxy) = risk::vulnerability_raster(s)?;
    out.push(Layer::new("vulnerability", "blue_red", vulnerability, proxy)?);
    Ok(out)
}

/// Layers from a session's recorded flow; empty before the first frame.
pub fn run_layers<T: Real>(session: &Session<T>) -> Result<Vec<Layer>> {
    let history = session.history();
    if history.is_empty() {
        return Ok(Vec::new());
    }
    let s = session.scenario();
    let outcomes = BarrierOutcome::from_contacts(session.state().barriers().cloned(), session.contacts());
    let l = risk_layers(s, history, &outcomes, &HazardOptions::from_scenario(s))?;
    let g = history.geometry;
    let flow = Raster { geometry: g, values: history.max_depth.clone() };
    let last = history.depth.last().expect("non-empty history");
    let deposit = Raster { geometry: g, values: last.iter().map(|&h| h as f64).collect() };
    Ok(vec![
        Layer::new("hazard", "red_yellow_green", l.hazard.normalized, false)?,
        Layer::new("risk", "red_yellow_green", l.risk, l.population_proxy)?,
        Layer::new("flow_path", "orange_red", flow, false)?,
        Layer::new("footprint", "orange_red", l.footprint, false)?,
        Layer::new("deposit", "purple", deposit, false)?,
    ])
}

pub fn layers_json(scenario: &str, layers: &[Layer]) -> Value {
    json!({ "scenario": scenario, "layers": layers.iter().map(Layer::to_json).collect::<Vec<_>>() })
}

pub fn export(dir: &Path, layers: &[Layer]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for l in layers {
        risk::export_layer(dir, &l.raster, &l.sidecar)?;
    }
    Ok(())
}
