//! Scenario description: lanes, vehicles, conflict zones and the fixed
//! crossing order expressed as ordered cross-lane vehicle pairs.

use crate::vehicle_model::VehicleParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A conflict zone on a lane, as an interval of path positions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Zone {
    /// Conflict-zone identifier; the same id appears on every lane that
    /// traverses the zone.
    pub id: usize,
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lane {
    /// Conflict zones along this lane, in increasing position.
    pub zones: Vec<Zone>,
    /// Indices into `Scenario::vehicles`, ordered rear to front (increasing
    /// initial position).
    pub vehicles: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vehicle {
    pub lane: usize,
    /// Initial path position (m). Negative: upstream of the intersection.
    pub p0: f64,
    /// Initial speed (m/s).
    pub v0: f64,
    /// Reference speed (m/s).
    pub v_ref: f64,
    #[serde(default)]
    pub params: Option<VehicleParams>,
}

/// One ordered crossing pair: `first` must leave zone `zone` before `second`
/// enters it. Always cross-lane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct CrossingPair {
    pub zone: usize,
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub lanes: Vec<Lane>,
    pub vehicles: Vec<Vehicle>,
    /// Fixed crossing order as ordered cross-lane pairs.
    pub order: Vec<CrossingPair>,
    /// Number of shooting intervals.
    pub horizon: usize,
    /// Interval length (s).
    pub dt: f64,
    #[serde(default)]
    pub default_params: Option<VehicleParams>,
}

/// A conflict-zone traversal of one vehicle, with the entry/exit positions
/// already widened by half the vehicle length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub zone: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Scenario {
    pub fn params_of(&self, vehicle: usize) -> VehicleParams {
        self.vehicles[vehicle]
            .params
            .or(self.default_params)
            .unwrap_or_default()
    }

    /// Conflict-zone traversals of `vehicle`, sorted by entry position. The
    /// geometric zone bounds are widened by half the vehicle length so the
    /// whole body is clear of the zone outside [p_in, p_out].
    pub fn crossings_of(&self, vehicle: usize) -> Vec<Crossing> {
        let half_d = 0.5 * self.params_of(vehicle).d;
        let lane = &self.lanes[self.vehicles[vehicle].lane];
        let mut out: Vec<Crossing> = lane
            .zones
            .iter()
            .map(|z| Crossing { zone: z.id, p_in: z.p_in - half_d, p_out: z.p_out + half_d })
            .collect();
        out.sort_by(|a, b| a.p_in.total_cmp(&b.p_in));
        out
    }

    /// Crossing index (position in `crossings_of`) of `vehicle` at `zone`.
    pub fn crossing_index(&self, vehicle: usize, zone: usize) -> Option<usize> {
        self.crossings_of(vehicle).iter().position(|c| c.zone == zone)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidScenario("horizon and dt must be positive".into()));
        }
        if let Some(p) = self.default_params {
            p.validate()?;
        }
        let mut seen = vec![false; self.vehicles.len()];
        for (li, lane) in self.lanes.iter().enumerate() {
            for w in lane.zones.windows(2) {
                if w[0].p_out > w[1].p_in {
                    return Err(Error::InvalidScenario(format!(
                        "lane {li}: overlapping zones {} and {}",
                        w[0].id, w[1].id
                    )));
                }
            }
            for z in &lane.zones {
                if !(z.p_in < z.p_out) {
                    return Err(Error::InvalidScenario(format!(
                        "lane {li}: zone {} has p_in >= p_out",
                        z.id
                    )));
                }
            }
            for &vi in &lane.vehicles {
                let v = self
                    .vehicles
                    .get(vi)
                    .ok_or_else(|| Error::InvalidScenario(format!("lane {li}: bad vehicle {vi}")))?;
                if v.lane != li {
                    return Err(Error::InvalidScenario(format!(
                        "vehicle {vi} listed on lane {li} but assigned to lane {}",
                        v.lane
                    )));
                }
                if seen[vi] {
                    return Err(Error::InvalidScenario(format!("vehicle {vi} listed twice")));
                }
                seen[vi] = true;
            }
            // Rear-to-front ordering with initial safety margins satisfied.
            for w in lane.vehicles.windows(2) {
                let rear = &self.vehicles[w[0]];
                let front = &self.vehicles[w[1]];
                let delta = self.params_of(w[0]).delta;
                if rear.p0 + delta > front.p0 {
                    return Err(Error::InvalidScenario(format!(
                        "lane {li}: vehicles {} and {} violate initial spacing ({} + {} > {})",
                        w[0], w[1], rear.p0, delta, front.p0
                    )));
                }
            }
        }
        if let Some(vi) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidScenario(format!("vehicle {vi} not on any lane")));
        }
        for (vi, v) in self.vehicles.iter().enumerate() {
            if v.lane >= self.lanes.len() {
                return Err(Error::InvalidScenario(format!("vehicle {vi}: bad lane {}", v.lane)));
            }
            if !(v.v0 >= 0.0) || !(v.v_ref > 0.0) {
                return Err(Error::InvalidScenario(format!("vehicle {vi}: bad speeds")));
            }
            if let Some(p) = v.params {
                p.validate()?;
            }
        }
        for (pi, pair) in self.order.iter().enumerate() {
            let (a, b) = (pair.first, pair.second);
            if a >= self.vehicles.len() || b >= self.vehicles.len() || a == b {
                return Err(Error::InvalidScenario(format!("order pair {pi}: bad vehicles")));
            }
            if self.vehicles[a].lane == self.vehicles[b].lane {
                return Err(Error::InvalidScenario(format!(
                    "order pair {pi}: vehicles {a} and {b} share lane {}; same-lane order is \
                     enforced by rear-end constraints",
                    self.vehicles[a].lane
                )));
            }
            for v in [a, b] {
                if self.crossing_index(v, pair.zone).is_none() {
                    return Err(Error::InvalidScenario(format!(
                        "order pair {pi}: vehicle {v} does not traverse zone {}",
                        pair.zone
                    )));
                }
            }
        }
        Ok(())
    }
}

/// First-come-first-served crossing order: at each conflict zone, rank the
/// traversing vehicles by the time they would reach the zone entry at constant
/// initial speed, and emit each consecutive cross-lane pair. Consecutive
/// same-lane pairs are dropped; their order is already implied by the rear-end
/// constraints and transitivity.
pub fn default_crossing_order(sc: &Scenario) -> Vec<CrossingPair> {
    let mut zone_ids: Vec<usize> = sc
        .lanes
        .iter()
        .flat_map(|l| l.zones.iter().map(|z| z.id))
        .collect();
    zone_ids.sort_unstable();
    zone_ids.dedup();

    let mut out = Vec::new();
    for zid in zone_ids {
        let mut ranked: Vec<(f64, usize)> = (0..sc.vehicles.len())
            .filter_map(|vi| {
                let c = sc
                    .crossings_of(vi)
                    .into_iter()
                    .find(|c| c.zone == zid)?;
                let v = &sc.vehicles[vi];
                if v.v0 <= 0.0 {
                    return None;
                }
                Some(((c.p_in - v.p0) / v.v0, vi))
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for w in ranked.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            if sc.vehicles[a].lane != sc.vehicles[b].lane {
                out.push(CrossingPair { zone: zid, first: a, second: b });
            }
        }
    }
    out
}
