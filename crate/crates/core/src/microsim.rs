//! Fixed-step 2D kinematic world with one ego and one adversary.

use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::feasibility::{sigma, FeasibilityParams, FeasibilityReport, Mode};
use crate::geometry::{normalize_angle, obb_overlap, rotate_into, KinematicState, RelativeFrame};
use crate::risk::{RiskCritic, RiskFeatures};
use crate::Error;

/// Acceleration box for one vehicle. Braking is a positive magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    pub lon_brake: f64,
    pub lon_accel: f64,
    pub lat: f64,
}

impl ControlBounds {
    /// Clamps `(a_lon, a_lat)` into the box; the flag reports whether anything moved.
    pub fn clamp(&self, a_lon: f64, a_lat: f64) -> ([f64; 2], bool) {
        let c = [
            a_lon.clamp(-self.lon_brake, self.lon_accel),
            a_lat.clamp(-self.lat, self.lat),
        ];
        (c, c[0] != a_lon || c[1] != a_lat)
    }
}

/// Semi-implicit body-frame point-mass update.
///
/// Out-of-box accelerations are clamped and counted in `clamps`.
pub fn step_vehicle(
    s: &KinematicState,
    a_lon: f64,
    a_lat: f64,
    dt: f64,
    bounds: &ControlBounds,
    clamps: &mut u64,
) -> KinematicState {
    let ([a_lon, a_lat], clamped) = bounds.clamp(a_lon, a_lat);
    if clamped {
        *clamps += 1;
    }
    let v_lon = (s.v_lon + a_lon * dt).max(0.0);
    let v_lat = s.v_lat + a_lat * dt;
    let (sn, cs) = s.yaw.sin_cos();
    let mut n = KinematicState {
        x: s.x + (v_lon * cs - v_lat * sn) * dt,
        y: s.y + (v_lon * sn + v_lat * cs) * dt,
        v_lon,
        v_lat,
        ..*s
    };
    let speed = v_lon.hypot(v_lat);
    if speed > 0.1 {
        n.yaw = normalize_angle(s.yaw + v_lat.atan2(v_lon));
        n.v_lon = speed;
        n.v_lat = 0.0;
    }
    n
}

/// Polyline with cumulative arc length and a curvature-derived speed cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
    curvature: Vec<f64>,
}

/// Closest point of a route to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length at the foot point.
    pub s: f64,
    /// Signed offset, left of the route positive.
    pub offset: f64,
    pub heading: f64,
}

impl Route {
    pub fn new(pts: Vec<[f64; 2]>) -> Result<Self, Error> {
        if pts.len() < 2 {
            return Err(Error::Config("route needs at least two waypoints".into()));
        }
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let l = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if !(l > 1e-9) {
                return Err(Error::Config(
                    "route has repeated or non-finite waypoints".into(),
                ));
            }
            cum.push(cum.last().unwrap() + l);
        }
        let mut curvature = vec![0.0; pts.len()];
        for i in 1..pts.len() - 1 {
            let h0 = (pts[i][1] - pts[i - 1][1]).atan2(pts[i][0] - pts[i - 1][0]);
            let h1 = (pts[i + 1][1] - pts[i][1]).atan2(pts[i + 1][0] - pts[i][0]);
            let ds = 0.5 * (cum[i + 1] - cum[i - 1]);
            curvature[i] = normalize_angle(h1 - h0).abs() / ds;
        }
        Ok(Self {
            pts,
            cum,
            curvature,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.pts
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn end(&self) -> [f64; 2] {
        *self.pts.last().unwrap()
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best = (
            f64::INFINITY,
            Projection {
                s: 0.0,
                offset: 0.0,
                heading: 0.0,
            },
        );
        for (i, w) in self.pts.windows(2).enumerate() {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len2 = dx * dx + dy * dy;
            let u = (((p[0] - w[0][0]) * dx + (p[1] - w[0][1]) * dy) / len2).clamp(0.0, 1.0);
            let (fx, fy) = (w[0][0] + u * dx, w[0][1] + u * dy);
            let d = (p[0] - fx).hypot(p[1] - fy);
            if d < best.0 {
                let len = len2.sqrt();
                let cross = (dx * (p[1] - w[0][1]) - dy * (p[0] - w[0][0])) / len;
                best = (
                    d,
                    Projection {
                        s: self.cum[i] + u * len,
                        offset: cross,
                        heading: dy.atan2(dx),
                    },
                );
            }
        }
        best.1
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.pts[i],
            Err(i) => i.clamp(1, self.pts.len() - 1),
        };
        let u = (s - self.cum[i - 1]) / (self.cum[i] - self.cum[i - 1]);
        let (a, b) = (self.pts[i - 1], self.pts[i]);
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
    }

    /// Largest curvature within `[s, s + ahead]`.
    pub fn max_curvature(&self, s: f64, ahead: f64) -> f64 {
        self.cum
            .iter()
            .zip(&self.curvature)
            .filter(|(c, _)| **c >= s - 1.0 && **c <= s + ahead)
            .map(|(_, k)| *k)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    RouteFollowerBrake,
    IdmPursuit,
    AggressiveVariant,
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "route_follower_brake" => Ok(Self::RouteFollowerBrake),
            "idm_pursuit" => Ok(Self::IdmPursuit),
            "aggressive_variant" => Ok(Self::AggressiveVariant),
            other => Err(Error::Config(format!(
                "unknown ego controller '{other}' (expected route_follower_brake, idm_pursuit or aggressive_variant)"
            ))),
        }
    }
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RouteFollowerBrake => "route_follower_brake",
            Self::IdmPursuit => "idm_pursuit",
            Self::AggressiveVariant => "aggressive_variant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoParams {
    pub cruise_speed: f64,
    pub idm_accel: f64,
    pub idm_decel: f64,
    pub headway: f64,
    pub min_gap: f64,
    /// Frontal TTC below which the route follower brakes fully.
    pub ttc_brake: f64,
    /// Lateral acceleration budget used to cap speed in curves.
    pub curve_lat_accel: f64,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
    /// Half width of the corridor around the route that counts as "in front".
    pub corridor_half_width: f64,
    pub detect_range: f64,
    /// Constant-velocity look-ahead used when checking the corridor.
    pub predict_horizon: f64,
}

impl Default for EgoParams {
    fn default() -> Self {
        Self {
            cruise_speed: 10.0,
            idm_accel: 1.5,
            idm_decel: 2.0,
            headway: 1.5,
            min_gap: 2.0,
            ttc_brake: 1.5,
            curve_lat_accel: 1.6,
            lookahead_min: 4.0,
            lookahead_gain: 0.8,
            corridor_half_width: 2.5,
            detect_range: 30.0,
            predict_horizon: 3.0,
        }
    }
}

/// Vehicle detected in the ego's route corridor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper distance along the route.
    pub gap: f64,
    /// Ego speed minus the leader's speed along the route.
    pub closing: f64,
}

/// What the scripted ego sees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoObservation {
    pub speed: f64,
    /// Distance to the pure-pursuit target point.
    pub waypoint_distance: f64,
    /// Target point in the ego body frame.
    pub target_local: [f64; 2],
    pub speed_limit: f64,
    pub front: Option<Leader>,
}

impl EgoObservation {
    pub fn frontal_ttc(&self) -> f64 {
        match self.front {
            Some(l) if l.closing > 0.0 => l.gap.max(0.0) / l.closing,
            _ => f64::INFINITY,
        }
    }
}

pub fn observe_ego(
    ego: &KinematicState,
    adv: &KinematicState,
    route: &Route,
    p: &EgoParams,
    bounds: &ControlBounds,
) -> EgoObservation {
    let speed = ego.speed();
    let proj = route.project([ego.x, ego.y]);
    let look = p.lookahead_min.max(p.lookahead_gain * speed);
    let tgt = route.point_at(proj.s + look);
    let local = rotate_into(ego.yaw, [tgt[0] - ego.x, tgt[1] - ego.y]);

    let brake_dist = speed * speed / (2.0 * p.idm_decel) + 10.0;
    let kappa = route.max_curvature(proj.s, brake_dist);
    let speed_limit = if kappa > 1e-6 {
        p.cruise_speed
            .min((p.curve_lat_accel.min(bounds.lat) / kappa).sqrt())
    } else {
        p.cruise_speed
    };

    let mut front: Option<Leader> = None;
    let av = adv.world_velocity();
    let steps = (p.predict_horizon / 0.5).round() as usize;
    for k in 0..=steps {
        let tau = k as f64 * 0.5;
        let q = [adv.x + av[0] * tau, adv.y + av[1] * tau];
        let pr = route.project(q);
        let ahead = pr.s - proj.s;
        if pr.offset.abs() > p.corridor_half_width || ahead <= 0.0 || ahead > p.detect_range {
            continue;
        }
        let (hs, hc) = pr.heading.sin_cos();
        let along = av[0] * hc + av[1] * hs;
        let cand = Leader {
            gap: ahead - ego.half_length - adv.half_length,
            closing: speed - along,
        };
        if front.is_none_or(|f| cand.gap < f.gap) {
            front = Some(cand);
        }
    }
    EgoObservation {
        speed,
        waypoint_distance: local[0].hypot(local[1]),
        target_local: local,
        speed_limit,
        front,
    }
}

fn pure_pursuit(obs: &EgoObservation, bounds: &ControlBounds) -> f64 {
    let l2 = obs.waypoint_distance.powi(2).max(1e-6);
    let kappa = 2.0 * obs.target_local[1] / l2;
    (obs.speed * obs.speed * kappa).clamp(-bounds.lat, bounds.lat)
}

fn idm(obs: &EgoObservation, p: &EgoParams, headway: f64) -> f64 {
    let v0 = obs.speed_limit.max(0.1);
    let free = 1.0 - (obs.speed / v0).powi(4);
    let interact = match obs.front {
        Some(l) => {
            let s_star = p.min_gap
                + (obs.speed * headway
                    + obs.speed * l.closing / (2.0 * (p.idm_accel * p.idm_decel).sqrt()))
                .max(0.0);
            (s_star / l.gap.max(0.1)).powi(2)
        }
        None => 0.0,
    };
    p.idm_accel * (free - interact)
}

/// Scripted ego control for one frame.
pub fn ego_controller(
    kind: ControllerKind,
    obs: &EgoObservation,
    p: &EgoParams,
    bounds: &ControlBounds,
) -> (f64, f64) {
    let lat = pure_pursuit(obs, bounds);
    let lon = match kind {
        ControllerKind::RouteFollowerBrake => {
            if obs.frontal_ttc() < p.ttc_brake {
                -bounds.lon_brake
            } else {
                0.8 * (obs.speed_limit - obs.speed)
            }
        }
        ControllerKind::IdmPursuit => idm(obs, p, p.headway),
        ControllerKind::AggressiveVariant => idm(obs, p, 0.5 * p.headway),
    };
    (lon.clamp(-bounds.lon_brake, bounds.lon_accel), lat)
}

/// Initial pose of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spawn {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub template: String,
    pub dt: f64,
    pub max_episode_steps: usize,
    pub route: Vec<[f64; 2]>,
    pub ego_spawn: Spawn,
    pub ego_controller: ControllerKind,
    pub ego_params: EgoParams,
    pub ego_bounds: ControlBounds,
    pub adv_spawn: Spawn,
    /// Uniform jitter of the adversary's spawn along its heading.
    pub adv_spawn_jitter: f64,
    /// Adversary initial speed range.
    pub adv_speed_range: [f64; 2],
    pub adv_bounds: ControlBounds,
    pub half_length: f64,
    pub half_width: f64,
    pub route_done_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        template("left_turn").expect("built-in template")
    }
}

pub const TEMPLATES: [&str; 4] = ["straight_obstacle", "cut_in", "left_turn", "crossing"];

fn arc(center: [f64; 2], r: f64, from: f64, to: f64, n: usize) -> Vec<[f64; 2]> {
    (0..=n)
        .map(|i| {
            let a = from + (to - from) * i as f64 / n as f64;
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect()
}

fn line(a: [f64; 2], b: [f64; 2], step: f64) -> Vec<[f64; 2]> {
    let n = ((b[0] - a[0]).hypot(b[1] - a[1]) / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
        })
        .collect()
}

fn chain(parts: Vec<Vec<[f64; 2]>>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    for p in parts {
        for q in p {
            if out
                .last()
                .is_none_or(|l| (l[0] - q[0]).hypot(l[1] - q[1]) > 1e-6)
            {
                out.push(q);
            }
        }
    }
    out
}

/// Built-in scenario presets. Lanes are 3.5 m wide, right-hand traffic.
pub fn template(id: &str) -> Result<WorldConfig, Error> {
    let base = |route, ego_spawn, adv_spawn, adv_speed_range| WorldConfig {
        template: id.to_string(),
        dt: 0.1,
        max_episode_steps: 250,
        route,
        ego_spawn,
        ego_controller: ControllerKind::IdmPursuit,
        ego_params: EgoParams::default(),
        ego_bounds: ControlBounds {
            lon_brake: 3.0,
            lon_accel: 2.0,
            lat: 2.0,
        },
        adv_spawn,
        adv_spawn_jitter: 5.0,
        adv_speed_range,
        adv_bounds: ControlBounds {
            lon_brake: 4.0,
            lon_accel: 4.0,
            lat: 1.5,
        },
        half_length: 2.4,
        half_width: 1.0,
        route_done_radius: 2.0,
    };
    let cfg = match id {
        "left_turn" => {
            // divided road: north in the right lane, 12 m radius left turn, west on the far side
            let c = [-9.0, -9.0];
            let route = chain(vec![
                line([3.0, -30.0], [3.0, -9.0], 2.0),
                arc(c, 12.0, 0.0, FRAC_PI_2, 24),
                line([-9.0, 3.0], [-35.0, 3.0], 2.0),
            ]);
            base(
                route,
                Spawn {
                    x: 3.0,
                    y: -25.0,
                    yaw: FRAC_PI_2,
                    speed: 8.0,
                },
                Spawn {
                    x: -3.0,
                    y: 25.0,
                    yaw: -FRAC_PI_2,
                    speed: 7.0,
                },
                [5.0, 9.0],
            )
        }
        "straight_obstacle" => base(
            line([0.0, 0.0], [0.0, 160.0], 2.0),
            Spawn {
                x: 0.0,
                y: 5.0,
                yaw: FRAC_PI_2,
                speed: 10.0,
            },
            Spawn {
                x: 0.0,
                y: 60.0,
                yaw: FRAC_PI_2,
                speed: 1.0,
            },
            [0.0, 2.0],
        ),
        "cut_in" => base(
            line([0.0, 0.0], [0.0, 220.0], 2.0),
            Spawn {
                x: 0.0,
                y: 5.0,
                yaw: FRAC_PI_2,
                speed: 10.0,
            },
            Spawn {
                x: 3.5,
                y: 20.0,
                yaw: FRAC_PI_2,
                speed: 10.0,
            },
            [8.0, 11.0],
        ),
        "crossing" => base(
            line([1.75, -45.0], [1.75, 60.0], 2.0),
            Spawn {
                x: 1.75,
                y: -40.0,
                yaw: FRAC_PI_2,
                speed: 9.0,
            },
            Spawn {
                x: -40.0,
                y: -1.75,
                yaw: 0.0,
                speed: 8.0,
            },
            [6.0, 9.0],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario template '{other}' (expected one of {})",
                TEMPLATES.join(", ")
            )))
        }
    };
    Ok(cfg)
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("world.dt must be > 0".into()));
        }
        if self.max_episode_steps < 2 {
            return Err(Error::Config("world.max_episode_steps must be >= 2".into()));
        }
        if !(self.half_length > 0.0 && self.half_width > 0.0) {
            return Err(Error::Config(
                "world vehicle half extents must be > 0".into(),
            ));
        }
        if !(self.adv_speed_range[0] >= 0.0 && self.adv_speed_range[0] <= self.adv_speed_range[1]) {
            return Err(Error::Config(
                "world.adv_speed_range must satisfy 0 <= lo <= hi".into(),
            ));
        }
        for (name, b) in [
            ("ego_bounds", &self.ego_bounds),
            ("adv_bounds", &self.adv_bounds),
        ] {
            if !(b.lon_brake > 0.0 && b.lon_accel >= 0.0 && b.lat >= 0.0) {
                return Err(Error::Config(format!(
                    "world.{name} must be non-negative with lon_brake > 0"
                )));
            }
        }
        Route::new(self.route.clone())?;
        Ok(())
    }

    /// Bounds consistent with the feasibility parameters' braking limits.
    pub fn check_against(&self, p: &FeasibilityParams) -> Result<(), Error> {
        if self.ego_bounds.lon_brake > p.a_ego_lon_brake_max + 1e-12
            || self.adv_bounds.lon_brake > p.a_npc_lon_brake_max + 1e-12
            || self.ego_bounds.lat > p.a_ego_lat_brake_max + 1e-12
            || self.adv_bounds.lat > p.a_npc_lat_brake_max + 1e-12
        {
            return Err(Error::Config(
                "world control bounds exceed the feasibility acceleration limits".into(),
            ));
        }
        Ok(())
    }

    pub fn spawn_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (KinematicState, KinematicState) {
        let e = self.ego_spawn;
        let ego = KinematicState::new(e.x, e.y, e.yaw, e.speed, self.half_length, self.half_width);
        let a = self.adv_spawn;
        let j = if self.adv_spawn_jitter > 0.0 {
            rng.random_range(-self.adv_spawn_jitter..=self.adv_spawn_jitter)
        } else {
            0.0
        };
        let [lo, hi] = self.adv_speed_range;
        let v = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let adv = KinematicState::new(
            a.x + j * a.yaw.cos(),
            a.y + j * a.yaw.sin(),
            a.yaw,
            v,
            self.half_length,
            self.half_width,
        );
        (ego, adv)
    }
}

/// Read-only view handed to adversary drivers each frame.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub step: usize,
    pub ego: &'a KinematicState,
    pub adv: &'a KinematicState,
    pub route: &'a Route,
    pub report: &'a FeasibilityReport,
    pub eps: f64,
    pub bounds: &'a ControlBounds,
}

impl Observation<'_> {
    pub fn ego_heading_error(&self) -> f64 {
        let pr = self.route.project([self.ego.x, self.ego.y]);
        normalize_angle(self.ego.yaw - pr.heading)
    }
}

/// Source of adversary accelerations.
pub trait AdversaryDriver {
    /// Requested `(lon, lat)` acceleration; the world clamps it to bounds.
    fn act(&mut self, obs: &Observation<'_>) -> [f64; 2];
}

/// Fixed acceleration every frame.
pub struct Constant(pub [f64; 2]);

impl AdversaryDriver for Constant {
    fn act(&mut self, _: &Observation<'_>) -> [f64; 2] {
        self.0
    }
}

/// Open-loop replay of logged actions; zero after the log runs out.
pub struct Replay {
    actions: Vec<[f64; 2]>,
}

impl Replay {
    pub fn new(actions: Vec<[f64; 2]>) -> Self {
        Self { actions }
    }
}

impl AdversaryDriver for Replay {
    fn act(&mut self, obs: &Observation<'_>) -> [f64; 2] {
        self.actions.get(obs.step).copied().unwrap_or([0.0, 0.0])
    }
}

/// Uniform accelerations inside the adversary's control box.
pub struct UniformRandom<R: Rng> {
    pub rng: R,
}

impl<R: Rng> AdversaryDriver for UniformRandom<R> {
    fn act(&mut self, obs: &Observation<'_>) -> [f64; 2] {
        let b = obs.bounds;
        let lat = if b.lat > 0.0 {
            self.rng.random_range(-b.lat..=b.lat)
        } else {
            0.0
        };
        [self.rng.random_range(-b.lon_brake..=b.lon_accel), lat]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Collision,
    RouteComplete,
    Timeout,
    Fault,
}

/// One simulator frame. Field order is part of the log format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub step: usize,
    pub ego: KinematicState,
    pub adv: KinematicState,
    /// Applied (clamped) adversary acceleration; zero on the final frame.
    pub adv_action: [f64; 2],
    pub sigma: f64,
    pub phi: f64,
    pub eps: f64,
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub seed: u64,
    pub level: usize,
    pub eps: f64,
    pub outcome: Outcome,
    pub collided: bool,
    pub steps: usize,
    pub clamps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub frames: Vec<Frame>,
    pub summary: EpisodeSummary,
}

impl EpisodeLog {
    pub fn actions(&self) -> Vec<[f64; 2]> {
        self.frames.iter().map(|f| f.adv_action).collect()
    }
}

/// Episode bookkeeping passed to `run_episode`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeCtx {
    pub episode: u64,
    pub seed: u64,
    pub level: usize,
    pub eps: f64,
}

/// Per-frame risk read-out. Collision frames are certain risk.
pub fn frame_phi(
    critic: Option<&RiskCritic>,
    rel: &RelativeFrame,
    far_cap: f64,
    collision: bool,
) -> f64 {
    if collision {
        return 1.0;
    }
    match critic {
        Some(c) => c.phi(
            &RiskFeatures::from_relative(rel, far_cap),
            rel.center_distance(),
        ),
        None => 0.0,
    }
}

/// Runs one episode. The spawn is drawn from `rng`, which the caller seeds.
pub fn run_episode<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    driver: &mut dyn AdversaryDriver,
    critic: Option<&RiskCritic>,
    fparams: &FeasibilityParams,
    ctx: EpisodeCtx,
    rng: &mut R,
) -> Result<EpisodeLog, Error> {
    let (ego, adv) = cfg.spawn_pair(rng);
    run_episode_from(cfg, ego, adv, driver, critic, fparams, ctx)
}

/// Runs one episode from given initial states (used for open-loop replay).
pub fn run_episode_from(
    cfg: &WorldConfig,
    mut ego: KinematicState,
    mut adv: KinematicState,
    driver: &mut dyn AdversaryDriver,
    critic: Option<&RiskCritic>,
    fparams: &FeasibilityParams,
    ctx: EpisodeCtx,
) -> Result<EpisodeLog, Error> {
    let route = Route::new(cfg.route.clone())?;
    let mut frames = Vec::with_capacity(cfg.max_episode_steps);
    let mut clamps = 0;
    let end = route.end();
    let outcome = loop {
        let step = frames.len();
        if !ego.is_finite() || !adv.is_finite() {
            log::warn!("episode {}: non-finite state at step {step}", ctx.episode);
            break Outcome::Fault;
        }
        let rel = RelativeFrame::new(&ego, &adv);
        let report = sigma(&ego, &adv, fparams, Mode::PhysicsLimit);
        let collision = obb_overlap(&ego, &adv);
        let phi = frame_phi(critic, &rel, fparams.far_cap, collision);
        let mut frame = Frame {
            step,
            ego,
            adv,
            adv_action: [0.0, 0.0],
            sigma: report.sigma,
            phi,
            eps: ctx.eps,
            collision,
        };
        if collision {
            frames.push(frame);
            break Outcome::Collision;
        }
        if (ego.x - end[0]).hypot(ego.y - end[1]) < cfg.route_done_radius {
            frames.push(frame);
            break Outcome::RouteComplete;
        }
        if step + 1 >= cfg.max_episode_steps {
            frames.push(frame);
            break Outcome::Timeout;
        }
        let obs = Observation {
            step,
            ego: &ego,
            adv: &adv,
            route: &route,
            report: &report,
            eps: ctx.eps,
            bounds: &cfg.adv_bounds,
        };
        let req = driver.act(&obs);
        let (applied, _) = cfg.adv_bounds.clamp(req[0], req[1]);
        let eobs = observe_ego(&ego, &adv, &route, &cfg.ego_params, &cfg.ego_bounds);
        let (e_lon, e_lat) =
            ego_controller(cfg.ego_controller, &eobs, &cfg.ego_params, &cfg.ego_bounds);
        frame.adv_action = applied;
        frames.push(frame);
        adv = step_vehicle(&adv, req[0], req[1], cfg.dt, &cfg.adv_bounds, &mut clamps);
        ego = step_vehicle(&ego, e_lon, e_lat, cfg.dt, &cfg.ego_bounds, &mut clamps);
    };
    Ok(EpisodeLog {
        summary: EpisodeSummary {
            episode: ctx.episode,
            seed: ctx.seed,
            level: ctx.level,
            eps: ctx.eps,
            outcome,
            collided: outcome == Outcome::Collision,
            steps: frames.len(),
            clamps,
        },
        frames,
    })
}

/// Re-simulates a logged episode open-loop: same initial states and adversary
/// accelerations, possibly a different ego.
pub fn replay_log(
    log: &EpisodeLog,
    cfg: &WorldConfig,
    critic: Option<&RiskCritic>,
    fparams: &FeasibilityParams,
) -> Result<EpisodeLog, Error> {
    let first = log
        .frames
        .first()
        .ok_or_else(|| Error::Input(format!("episode {} has no frames", log.summary.episode)))?;
    let s = &log.summary;
    let ctx = EpisodeCtx {
        episode: s.episode,
        seed: s.seed,
        level: s.level,
        eps: s.eps,
    };
    let mut d = Replay::new(log.actions());
    run_episode_from(cfg, first.ego, first.adv, &mut d, critic, fparams, ctx)
}

/// Recomputes a frame's score and risk from its stored states.
pub fn rescore_frame(
    f: &Frame,
    critic: Option<&RiskCritic>,
    fparams: &FeasibilityParams,
) -> (f64, f64) {
    let rel = RelativeFrame::new(&f.ego, &f.adv);
    let s = sigma(&f.ego, &f.adv, fparams, Mode::PhysicsLimit).sigma;
    (
        s,
        frame_phi(critic, &rel, fparams.far_cap, obb_overlap(&f.ego, &f.adv)),
    )
}

/// Heading of a route segment nearest to `p`, as a unit vector.
pub fn route_tangent(route: &Route, p: [f64; 2]) -> [f64; 2] {
    let h = route.project(p).heading;
    [h.cos(), h.sin()]
}
