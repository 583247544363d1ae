//! Flow statistics recorded at barrier faces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::collider::Barrier;
use super::state::SimulationState;

/// Default wet threshold for counting a face strip as wet, meters.
pub const WET_DEPTH: f64 = 0.05;

/// Running record of the flow arriving at one barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BarrierContactLog<T: Real> {
    pub barrier_id: String,
    /// Maximum volume-weighted approach speed in front of the face, m/s.
    pub max_approach_speed: T,
    /// Maximum flow depth at the face, m.
    pub max_face_depth: T,
    /// Maximum wet width of the face, m.
    pub face_width: T,
    /// Speed, depth and wet width at the step where `v² h w` peaked.
    pub impact_speed: T,
    pub impact_depth: T,
    pub impact_width: T,
    /// Fluid volume that crossed the barrier line within its width, m³.
    pub overtopped_volume: T,
    pub peak_flow_rate: T,
    /// `(t, flow rate m³/s)` per recorded step.
    pub flow_rate: Vec<(T, T)>,
    #[serde(skip)]
    previous_side: Vec<T>,
    #[serde(skip)]
    counted: Vec<bool>,
}

impl<T: Real> BarrierContactLog<T> {
    pub fn new(barrier_id: impl Into<String>) -> Self {
        Self {
            barrier_id: barrier_id.into(),
            max_approach_speed: T::zero(),
            max_face_depth: T::zero(),
            face_width: T::zero(),
            impact_speed: T::zero(),
            impact_depth: T::zero(),
            impact_width: T::zero(),
            overtopped_volume: T::zero(),
            peak_flow_rate: T::zero(),
            flow_rate: Vec::new(),
            previous_side: Vec::new(),
            counted: Vec::new(),
        }
    }

    /// Forget particle sides, e.g. after the barrier was moved.
    pub fn rebase(&mut self) {
        self.previous_side.clear();
    }

    /// Fold the current state into the log.
    pub fn record(&mut self, state: &SimulationState<T>) -> Result<()> {
        let barrier =
            state.barrier(&self.barrier_id).ok_or_else(|| Error::UnknownBarrier(self.barrier_id.clone()))?.clone();
        self.record_with(state, &barrier);
        Ok(())
    }

    fn record_with(&mut self, state: &SimulationState<T>, barrier: &Barrier<T>) {
        let dx = state.spacing();
        let two = T::lit(2.0);
        // the approach band sits clear of the grid nodes the face projects
        let band = two * dx;
        let gap = two * dx;
        let half_t = barrier.thickness / two;
        let half_w = barrier.width / two;
        let n_bins = (barrier.width / dx).ceil().to_usize().unwrap_or(1).max(1);
        let bin_w = barrier.width / T::count(n_bins);
        let mut bin_volume = vec![T::zero(); n_bins];
        let mut band_volume = T::zero();
        let mut weighted_speed = T::zero();
        let mut flux = T::zero();
        let rot_t = barrier.rotation().transpose();

        let fresh = self.previous_side.len() != state.particles.len();
        if self.counted.len() != state.particles.len() {
            self.counted = vec![false; state.particles.len()];
        }
        if fresh {
            self.previous_side = vec![T::nan(); state.particles.len()];
        }

        for (i, p) in state.particles.iter().enumerate() {
            let local = rot_t.mul_vec(p.position - barrier.center);
            let within_span = local.y.abs() <= half_w;
            let prev = self.previous_side[i];
            if within_span && !self.counted[i] && prev < T::zero() && local.x >= T::zero() {
                self.counted[i] = true;
                self.overtopped_volume += p.volume;
            }
            self.previous_side[i] = local.x;

            if within_span && local.x < -half_t - gap && local.x >= -half_t - gap - band {
                let vn = rot_t.mul_vec(p.velocity).x.max(T::zero());
                band_volume += p.volume;
                weighted_speed += p.volume * vn;
                flux += p.volume * vn;
                let bin = ((local.y + half_w) / bin_w).floor().to_usize().unwrap_or(0).min(n_bins - 1);
                bin_volume[bin] += p.volume;
            }
        }

        let strip_area = bin_w * band;
        let wet = T::lit(WET_DEPTH);
        let mut depth = T::zero();
        let mut wet_bins = 0usize;
        for v in &bin_volume {
            let d = *v / strip_area;
            depth = depth.max(d);
            if d >= wet {
                wet_bins += 1;
            }
        }
        let speed = if band_volume > T::zero() { weighted_speed / band_volume } else { T::zero() };
        let rate = flux / band;
        let width = (T::count(wet_bins) * bin_w).min(barrier.width);
        if speed * speed * depth * width > self.impact_speed * self.impact_speed * self.impact_depth * self.impact_width
        {
            self.impact_speed = speed;
            self.impact_depth = depth;
            self.impact_width = width;
        }
        self.max_approach_speed = self.max_approach_speed.max(speed);
        self.max_face_depth = self.max_face_depth.max(depth);
        self.face_width = self.face_width.max(width);
        self.peak_flow_rate = self.peak_flow_rate.max(rate);
        self.flow_rate.push((state.time, rate));
    }
}

impl<T: Real> SimulationState<T> {
    /// Record the current flow against barrier `id` into `log`.
    pub fn record_barrier_contact(&self, id: &str, log: &mut BarrierContactLog<T>) -> Result<()> {
        let barrier = self.barrier(id).ok_or_else(|| Error::UnknownBarrier(id.to_string()))?.clone();
        if log.barrier_id != id {
            *log = BarrierContactLog::new(id);
        }
        log.record_with(self, &barrier);
        Ok(())
    }
}
