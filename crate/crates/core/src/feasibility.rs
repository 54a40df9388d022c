//! Physical-feasibility score.
//!
//! Per frame, the ego/adversary pair is decomposed into the ego's
//! longitudinal and lateral axes. On each axis a braking-limit distance is
//! compared against the edge-to-edge clearance, the axis that closes first
//! (by time to collision) is found, and the orthogonal axis is credited with
//! the displacement reachable before that time. The normalized residuals are
//! aggregated with a p-norm into `sigma`: non-negative means some combination
//! of braking and steering can still resolve the encounter, negative means it
//! cannot under the decoupled-axis model.

use serde::{Deserialize, Serialize};

use crate::geometry::{KinematicState, RelativeFrame};

/// Limits below this are treated as zero when normalizing residuals.
pub const LIMIT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisPair {
    pub lon: f64,
    pub lat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasibilityParams {
    pub dt: f64,
    pub a_ego_lon_brake_max: f64,
    pub a_npc_lon_brake_max: f64,
    pub a_ego_lat_brake_max: f64,
    pub a_npc_lat_brake_max: f64,
    pub p_norm: u32,
    pub ttc_floor: f64,
    pub far_cap: f64,
    /// Minimum lateral buffer (conservative mode).
    pub min_lat_safe: f64,
    /// Radians. Used to label the heading relation of the pair.
    pub same_dir_yaw_threshold: f64,
    /// Reaction time (conservative mode).
    pub rho: f64,
    /// Acceleration during the reaction window (conservative mode).
    pub a_accel_max: AxisPair,
    /// Guaranteed braking after the reaction window (conservative mode).
    pub a_min_brake: AxisPair,
}

impl Default for FeasibilityParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            a_ego_lon_brake_max: 3.0,
            a_npc_lon_brake_max: 4.0,
            a_ego_lat_brake_max: 2.0,
            a_npc_lat_brake_max: 1.5,
            p_norm: 2,
            ttc_floor: 1e-4,
            far_cap: 10_000.0,
            min_lat_safe: 0.30,
            same_dir_yaw_threshold: 30f64.to_radians(),
            rho: 0.5,
            a_accel_max: AxisPair { lon: 2.0, lat: 0.2 },
            a_min_brake: AxisPair { lon: 1.0, lat: 0.2 },
        }
    }
}

impl FeasibilityParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("dt", self.dt),
            ("a_ego_lon_brake_max", self.a_ego_lon_brake_max),
            ("a_npc_lon_brake_max", self.a_npc_lon_brake_max),
            ("a_ego_lat_brake_max", self.a_ego_lat_brake_max),
            ("a_npc_lat_brake_max", self.a_npc_lat_brake_max),
            ("ttc_floor", self.ttc_floor),
            ("far_cap", self.far_cap),
            ("a_min_brake.lon", self.a_min_brake.lon),
            ("a_min_brake.lat", self.a_min_brake.lat),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.p_norm < 1 {
            return Err("p_norm must be >= 1".into());
        }
        if self.rho < 0.0 || self.min_lat_safe < 0.0 {
            return Err("rho and min_lat_safe must be non-negative".into());
        }
        if self.a_accel_max.lon < 0.0 || self.a_accel_max.lat < 0.0 {
            return Err("a_accel_max must be non-negative".into());
        }
        Ok(())
    }

    /// Adversary braking capability projected onto the ego axes for a
    /// relative heading `dpsi`.
    pub fn adv_brake_projected(&self, dpsi: f64) -> AxisPair {
        let (c, s) = (dpsi.cos().abs(), dpsi.sin().abs());
        AxisPair {
            lon: c * self.a_npc_lon_brake_max + s * self.a_npc_lat_brake_max,
            lat: s * self.a_npc_lon_brake_max + c * self.a_npc_lat_brake_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PhysicsLimit,
    ConservativeRss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lon,
    Lat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollidingAxis {
    Lon,
    Lat,
    None,
}

/// How the two vehicles move relative to each other along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Both move toward each other.
    Opposite,
    /// Both move the same way; one follows the other.
    Same,
    /// Neither moves toward the other.
    Receding,
}

/// Heading relation label derived from the yaw threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingRelation {
    Aligned,
    Oncoming,
    Crossing,
}

pub fn heading_relation(delta_psi: f64, threshold: f64) -> HeadingRelation {
    let a = delta_psi.abs();
    if a <= threshold {
        HeadingRelation::Aligned
    } else if a >= std::f64::consts::PI - threshold {
        HeadingRelation::Oncoming
    } else {
        HeadingRelation::Crossing
    }
}

fn stop_dist(v: f64, a: f64) -> f64 {
    v * v / (2.0 * a)
}

/// Sum of both stopping distances for vehicles approaching head-on.
pub fn limit_lon_opposite(v_r: f64, v_f: f64, a_r: f64, a_f: f64) -> f64 {
    stop_dist(v_r, a_r) + stop_dist(v_f, a_f)
}

/// Braking-only boundary for a rear vehicle following a front vehicle.
///
/// The equal-speed term only applies when the rear closes in, brakes harder,
/// and the speeds equalize before the front vehicle has stopped; otherwise the
/// gap is smallest once both have stopped and the stop term is exact.
pub fn limit_lon_same(v_r: f64, v_f: f64, a_r: f64, a_f: f64) -> f64 {
    let stop = stop_dist(v_r, a_r) - stop_dist(v_f, a_f);
    let mut d = stop;
    if v_r > v_f && a_r > a_f {
        let t_equal = (v_r - v_f) / (a_r - a_f);
        if t_equal <= v_f / a_f {
            d = d.max((v_r - v_f).powi(2) / (2.0 * (a_r - a_f)));
        }
    }
    d.max(0.0)
}

/// Lateral braking-limit distance. `v_r` is the left vehicle's speed toward
/// the right one; for `Same`, `v_f` is the right vehicle's speed away from
/// the left one, for `Opposite` its speed toward it.
pub fn limit_lat(v_r: f64, v_f: f64, a_r: f64, a_f: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Same => (stop_dist(v_r, a_r) - stop_dist(v_f, a_f)).max(0.0),
        Direction::Opposite => stop_dist(v_r, a_r) + stop_dist(v_f, a_f),
        Direction::Receding => 0.0,
    }
}

/// Reaction-delayed safe distances with conservative braking.
///
/// `a_r_max_brake`/`a_f_max_brake` are the vehicles' maximal decelerations;
/// only the front vehicle's is used (same-direction longitudinal case).
/// Lateral distances take both speeds as speeds toward the other vehicle.
pub fn conservative_rss(
    v_r: f64,
    v_f: f64,
    axis: Axis,
    direction: Direction,
    a_f_max_brake: f64,
    params: &FeasibilityParams,
) -> f64 {
    let rho = params.rho;
    match axis {
        Axis::Lon => {
            let acc = params.a_accel_max.lon;
            let brk = params.a_min_brake.lon;
            let v_r_rho = v_r + rho * acc;
            match direction {
                Direction::Opposite => {
                    let v_f_rho = v_f.abs() + rho * acc;
                    0.5 * (v_r + v_r_rho) * rho
                        + stop_dist(v_r_rho, brk)
                        + 0.5 * (v_f.abs() + v_f_rho) * rho
                        + stop_dist(v_f_rho, brk)
                }
                Direction::Same => (v_r * rho + 0.5 * acc * rho * rho + stop_dist(v_r_rho, brk)
                    - stop_dist(v_f, a_f_max_brake))
                .max(0.0),
                Direction::Receding => 0.0,
            }
        }
        Axis::Lat => {
            let acc = params.a_accel_max.lat;
            let brk = params.a_min_brake.lat;
            let v_r_rho = v_r + rho * acc;
            let v_f_rho = v_f + rho * acc;
            let inner = 0.5 * (v_r + v_r_rho) * rho + stop_dist(v_r_rho, brk)
                - (0.5 * (v_f.abs() + v_f_rho.abs()) * rho - stop_dist(v_f_rho, brk));
            params.min_lat_safe + inner.max(0.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ttc {
    pub t_x: f64,
    pub t_y: f64,
    pub t: f64,
    pub axis: CollidingAxis,
}

/// Per-axis time to collision from the current clearances and closing speeds.
pub fn axial_ttc(rel: &RelativeFrame, params: &FeasibilityParams) -> Ttc {
    let axis_ttc = |clearance: f64, closing: f64| {
        if closing > 0.0 {
            (clearance.max(0.0) / closing.max(params.ttc_floor)).min(params.far_cap)
        } else {
            params.far_cap
        }
    };
    let t_x = axis_ttc(rel.clearance_x, rel.dv_x);
    let t_y = axis_ttc(rel.clearance_y, rel.dv_y);
    let axis = if rel.dv_x <= 0.0 && rel.dv_y <= 0.0 {
        CollidingAxis::None
    } else if t_x <= t_y {
        CollidingAxis::Lon
    } else {
        CollidingAxis::Lat
    };
    Ttc {
        t_x,
        t_y,
        t: t_x.min(t_y).min(params.far_cap),
        axis,
    }
}

/// Displacement reachable on the axis orthogonal to the colliding one.
/// `dv_n` is the closing speed on that orthogonal axis and `a_rel_n` the
/// combined acceleration bound available on it.
pub fn orthogonal_compensation(
    t: f64,
    axis: CollidingAxis,
    dv_n: f64,
    a_rel_n: f64,
    params: &FeasibilityParams,
) -> (f64, f64) {
    let t = t.min(params.far_cap);
    let l_n = if dv_n > 0.0 {
        0.5 * a_rel_n * t * t
    } else {
        0.0
    };
    match axis {
        CollidingAxis::Lon => (0.0, l_n),
        CollidingAxis::Lat => (l_n, 0.0),
        CollidingAxis::None => (0.0, 0.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub sigma: f64,
    pub d_limit_x: f64,
    pub d_limit_y: f64,
    pub clearance_x: f64,
    pub clearance_y: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t: f64,
    pub colliding_axis: CollidingAxis,
    pub l_x: f64,
    pub l_y: f64,
    /// Normalized residuals per axis (before the p-norm).
    pub residual_x: f64,
    pub residual_y: f64,
    pub direction_x: Direction,
    pub direction_y: Direction,
    pub heading: HeadingRelation,
    pub mode: Mode,
}

/// Motion class of one axis from each vehicle's speed toward the other.
/// Returns the class and (rear/left speed, front/right speed, rear brake, front brake).
fn classify(
    ego_toward: f64,
    adv_toward: f64,
    a_ego: f64,
    a_adv: f64,
) -> (Direction, f64, f64, f64, f64) {
    match (ego_toward > 0.0, adv_toward > 0.0) {
        (true, true) => (Direction::Opposite, ego_toward, adv_toward, a_ego, a_adv),
        (true, false) => (Direction::Same, ego_toward, -adv_toward, a_ego, a_adv),
        (false, true) => (Direction::Same, adv_toward, -ego_toward, a_adv, a_ego),
        (false, false) => (Direction::Receding, 0.0, 0.0, a_ego, a_adv),
    }
}

fn axis_limit(
    axis: Axis,
    offset: f64,
    ego_v: f64,
    adv_v: f64,
    a_ego: f64,
    a_adv: f64,
    params: &FeasibilityParams,
    mode: Mode,
) -> (f64, Direction) {
    // sign of the adversary's side; a centered adversary is treated as ahead/left
    let side = if offset < 0.0 { -1.0 } else { 1.0 };
    let ego_toward = side * ego_v;
    let adv_toward = -side * adv_v;
    let (dir, v_r, v_f, a_r, a_f) = classify(ego_toward, adv_toward, a_ego, a_adv);
    let limit = match (mode, axis) {
        (Mode::PhysicsLimit, Axis::Lon) => match dir {
            Direction::Opposite => limit_lon_opposite(v_r, v_f, a_r, a_f),
            Direction::Same => limit_lon_same(v_r, v_f, a_r, a_f),
            Direction::Receding => 0.0,
        },
        (Mode::PhysicsLimit, Axis::Lat) => limit_lat(v_r, v_f, a_r, a_f, dir),
        (Mode::ConservativeRss, Axis::Lon) => conservative_rss(v_r, v_f, axis, dir, a_f, params),
        (Mode::ConservativeRss, Axis::Lat) => {
            // speeds toward each other; a receding right vehicle contributes zero
            let (toward_r, toward_f) = match dir {
                Direction::Opposite => (v_r, v_f),
                Direction::Same => (v_r, 0.0),
                Direction::Receding => (0.0, 0.0),
            };
            conservative_rss(toward_r, toward_f, axis, dir, a_f, params)
        }
    };
    (limit, dir)
}

fn normalized_residual(limit: f64, clearance: f64, l: f64) -> f64 {
    if limit <= 0.0 {
        return 0.0;
    }
    (limit - clearance - l).max(0.0) / limit.max(LIMIT_FLOOR)
}

/// `1 - ||(r_x, r_y)||_p` over the normalized axis residuals.
pub fn aggregate(residual_x: f64, residual_y: f64, p_norm: u32) -> f64 {
    let norm = if p_norm == 2 {
        residual_x.hypot(residual_y)
    } else {
        let p = p_norm as f64;
        (residual_x.powf(p) + residual_y.powf(p)).powf(1.0 / p)
    };
    1.0 - norm
}

/// Score from per-axis limits, clearances and compensations.
pub fn score(limits: [f64; 2], clearances: [f64; 2], comp: [f64; 2], p_norm: u32) -> f64 {
    aggregate(
        normalized_residual(limits[0], clearances[0], comp[0]),
        normalized_residual(limits[1], clearances[1], comp[1]),
        p_norm,
    )
}

/// Feasibility score of one ego/adversary frame.
pub fn sigma(
    ego: &KinematicState,
    adv: &KinematicState,
    params: &FeasibilityParams,
    mode: Mode,
) -> FeasibilityReport {
    let rel = RelativeFrame::new(ego, adv);
    sigma_from_relative(&rel, params, mode)
}

pub fn sigma_from_relative(
    rel: &RelativeFrame,
    params: &FeasibilityParams,
    mode: Mode,
) -> FeasibilityReport {
    let adv_brake = params.adv_brake_projected(rel.delta_psi);
    let (d_limit_x, direction_x) = axis_limit(
        Axis::Lon,
        rel.d_x_actual,
        rel.ego_vel[0],
        rel.adv_vel[0],
        params.a_ego_lon_brake_max,
        adv_brake.lon,
        params,
        mode,
    );
    let (d_limit_y, direction_y) = axis_limit(
        Axis::Lat,
        rel.d_y_actual,
        rel.ego_vel[1],
        rel.adv_vel[1],
        params.a_ego_lat_brake_max,
        adv_brake.lat,
        params,
        mode,
    );

    let ttc = axial_ttc(rel, params);
    let (dv_n, a_rel_n) = match ttc.axis {
        CollidingAxis::Lon => (rel.dv_y, params.a_ego_lat_brake_max + adv_brake.lat),
        CollidingAxis::Lat => (rel.dv_x, params.a_ego_lon_brake_max + adv_brake.lon),
        CollidingAxis::None => (0.0, 0.0),
    };
    let (l_x, l_y) = orthogonal_compensation(ttc.t, ttc.axis, dv_n, a_rel_n, params);

    let residual_x = normalized_residual(d_limit_x, rel.clearance_x, l_x);
    let residual_y = normalized_residual(d_limit_y, rel.clearance_y, l_y);

    FeasibilityReport {
        sigma: aggregate(residual_x, residual_y, params.p_norm),
        d_limit_x,
        d_limit_y,
        clearance_x: rel.clearance_x,
        clearance_y: rel.clearance_y,
        t_x: ttc.t_x,
        t_y: ttc.t_y,
        t: ttc.t,
        colliding_axis: ttc.axis,
        l_x,
        l_y,
        residual_x,
        residual_y,
        direction_x,
        direction_y,
        heading: heading_relation(rel.delta_psi, params.same_dir_yaw_threshold),
        mode,
    }
}
