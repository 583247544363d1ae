//! Synthetic terrains used by tests, examples and the demo scenarios.

use chrono::NaiveDate;

use crate::engine::{Barrier, Polygon};
use crate::linalg::Vec3;
use crate::raster::{Raster, RasterGeometry};
use crate::scenario::{BuildingFootprint, EventScale, LandslideEvent, RainfallRaster, Release, Scenario};
use crate::session::CommandPayload;
use crate::terrain::TerrainGrid;

/// Flat terrain at height `h`.
pub fn flat(n_cols: usize, n_rows: usize, cell_size: f64, h: f64) -> TerrainGrid<f64> {
    let g = RasterGeometry::new(n_cols, n_rows, cell_size, 0.0, 0.0).expect("valid geometry");
    TerrainGrid::from_fn(g, |_, _| h).expect("valid grid")
}

/// Plane rising with `x` at `dh_dx` and with `y` at `dh_dy`.
pub fn plane(n_cols: usize, n_rows: usize, cell_size: f64, dh_dx: f64, dh_dy: f64) -> TerrainGrid<f64> {
    let g = RasterGeometry::new(n_cols, n_rows, cell_size, 0.0, 0.0).expect("valid geometry");
    TerrainGrid::from_fn(g, |x, y| dh_dx * x + dh_dy * y).expect("valid grid")
}

/// Layout of the V-channel fixture: a straight V-shaped gully descending
/// along +x into a flat run-out fan.
#[derive(Debug, Clone)]
pub struct VChannel {
    pub terrain: TerrainGrid<f64>,
    pub release: Polygon,
    /// Barrier spanning the gully, flow direction +x.
    pub barrier: Barrier<f64>,
    /// Cells whose center lies beyond this x are downstream of the barrier.
    pub downstream_x: f64,
}

pub const V_CHANNEL_COLS: usize = 64;
pub const V_CHANNEL_ROWS: usize = 24;
const V_SLOPE_END: f64 = 36.0;
const V_SLOPE: f64 = 0.36;
const V_BANK: f64 = 0.6;
const V_BARRIER_X: f64 = 28.0;

fn v_channel_height(x: f64, y: f64) -> f64 {
    let yc = V_CHANNEL_ROWS as f64 * 0.5;
    let along = V_SLOPE * (V_SLOPE_END - x).max(0.0);
    // banks fade out over the fan so the flow spreads once it leaves the gully
    let fade = ((x - V_SLOPE_END) / 8.0).clamp(0.0, 1.0);
    let bank = V_BANK * (1.0 - 0.9 * fade);
    along + bank * (y - yc).abs()
}

pub fn v_channel() -> VChannel {
    let g = RasterGeometry::new(V_CHANNEL_COLS, V_CHANNEL_ROWS, 1.0, 0.0, 0.0).expect("valid geometry");
    let terrain = TerrainGrid::from_fn(g, v_channel_height).expect("valid grid");
    let yc = V_CHANNEL_ROWS as f64 * 0.5;
    let release = Polygon::rect(4.0, yc - 3.0, 12.0, yc + 3.0);
    let base = terrain.height_at(V_BARRIER_X, yc).expect("inside");
    let barrier = Barrier::new("gully", Vec3::new(V_BARRIER_X, yc, base), 0.0, 4.0, 14.0, 1.0);
    VChannel { terrain, release, barrier, downstream_x: V_BARRIER_X + 2.0 }
}

/// Valley between two parallel ridges, draining along +x.
pub fn two_ridge_valley(n_cols: usize, n_rows: usize, cell_size: f64) -> TerrainGrid<f64> {
    let g = RasterGeometry::new(n_cols, n_rows, cell_size, 0.0, 0.0).expect("valid geometry");
    let width = n_rows as f64 * cell_size;
    let length = n_cols as f64 * cell_size;
    TerrainGrid::from_fn(g, move |x, y| {
        let ridge = |c: f64| 12.0 * (-((y - c) / (0.12 * width)).powi(2)).exp();
        0.25 * (length - x) + ridge(0.2 * width) + ridge(0.8 * width)
    })
    .expect("valid grid")
}

/// Small conical island with a gentle summit, surrounded by sea level.
pub fn island(n: usize, cell_size: f64) -> TerrainGrid<f64> {
    let g = RasterGeometry::new(n, n, cell_size, 0.0, 0.0).expect("valid geometry");
    let c = n as f64 * cell_size * 0.5;
    TerrainGrid::from_fn(g, move |x, y| {
        let r = ((x - c).powi(2) + (y - c).powi(2)).sqrt() / c;
        let dome = (1.0 - r).max(0.0);
        40.0 * dome * dome * (3.0 - 2.0 * dome) + 2.0 * (x / c * 3.0).sin() * dome
    })
    .expect("valid grid")
}

/// Scenario over the V-channel with `volume` m³ released at the head of the gully.
pub fn v_channel_scenario(volume: f64) -> Scenario {
    let f = v_channel();
    let release = Release { polygon: f.release.0.clone(), volume_m3: volume };
    let mut s = Scenario::new("v-channel", f.terrain, release, 7);
    s.params.dt = 4e-3;
    s.params.duration = 12.0;
    s.params.boulders.count = 4;
    s
}

/// Command placing the V-channel barrier.
pub fn v_channel_barrier_command() -> CommandPayload {
    CommandPayload::PlaceBarrier { barrier: v_channel().barrier }
}

/// Demo scenarios shipped with the repository.
pub fn scenarios() -> Vec<Scenario> {
    let mut out = vec![v_channel_scenario(60.0)];

    let mut plane = Scenario::new(
        "plane",
        plane(48, 32, 1.0, 0.25, 0.0),
        Release { polygon: Polygon::rect(36.0, 12.0, 44.0, 20.0).0, volume_m3: 40.0 },
        3,
    );
    plane.params.duration = 8.0;
    plane.params.dt = 4e-3;
    plane.buildings.push(BuildingFootprint { polygon: Polygon::rect(6.0, 10.0, 10.0, 14.0).0, height: 6.0 });
    plane.buildings.push(BuildingFootprint { polygon: Polygon::rect(6.0, 18.0, 10.0, 22.0).0, height: 9.0 });
    out.push(plane);

    let valley_terrain = two_ridge_valley(60, 40, 1.0);
    let mut valley = Scenario::new(
        "two-ridge-valley",
        valley_terrain,
        Release { polygon: Polygon::rect(4.0, 16.0, 12.0, 24.0).0, volume_m3: 80.0 },
        5,
    );
    valley.params.dt = 4e-3;
    valley.params.duration = 10.0;
    valley.params.boulders.count = 3;
    out.push(valley);

    let island_terrain = island(48, 2.0);
    let g = island_terrain.geometry;
    let rain = Raster::from_values(
        g,
        (0..g.n_rows).flat_map(|_| (0..g.n_cols).map(move |c| 20.0 + 40.0 * (c as f64 / g.n_cols as f64))).collect(),
    )
    .expect("sized to the grid");
    let mut isle = Scenario::new(
        "island",
        island_terrain,
        Release { polygon: Polygon::rect(40.0, 44.0, 52.0, 52.0).0, volume_m3: 120.0 },
        9,
    );
    isle.params.dt = 4e-3;
    isle.params.duration = 10.0;
    isle.rainfall = Some(RainfallRaster::new(rain, "storm").expect("non-negative"));
    out.push(isle);
    out
}

/// Historical events matching the demo island extent.
pub fn events() -> Vec<LandslideEvent> {
    let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("valid date");
    vec![
        LandslideEvent {
            id: "e1".into(),
            date: d("1984-07-02"),
            x: 30.0,
            y: 60.0,
            scale: EventScale::Volume(250.0),
            description: "Cut-slope failure above the coastal road".into(),
        },
        LandslideEvent {
            id: "e2".into(),
            date: d("2005-08-20"),
            x: 52.0,
            y: 40.0,
            scale: EventScale::Volume(1200.0),
            description: "Channelised debris flow, typhoon rainfall".into(),
        },
        LandslideEvent {
            id: "e3".into(),
            date: d("2006-06-01"),
            x: 48.0,
            y: 50.0,
            scale: EventScale::Category("large".into()),
            description: "Open hillslope landslide, \"north face\"".into(),
        },
        LandslideEvent {
            id: "e4".into(),
            date: d("2008-06-07"),
            x: 44.0,
            y: 48.0,
            scale: EventScale::Volume(3500.0),
            description: "Rainstorm, multiple failures".into(),
        },
        LandslideEvent {
            id: "e5".into(),
            date: d("2021-10-11"),
            x: 60.0,
            y: 30.0,
            scale: EventScale::Volume(80.0),
            description: "Minor washout".into(),
        },
    ]
}
