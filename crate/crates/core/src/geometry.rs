//! Planar vehicle geometry: body-frame transforms, projected footprint
//! envelopes, edge-to-edge clearances and oriented-box collision tests.
//!
//! Footprint dimensions are half extents throughout, so `|d| - s` is the
//! signed edge-to-edge gap along an axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Pose and body-frame velocity of one vehicle with its rectangular footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, kept in `(-pi, pi]`.
    pub yaw: f64,
    /// Body-frame longitudinal speed.
    pub v_lon: f64,
    /// Body-frame lateral speed (left positive).
    pub v_lat: f64,
    /// Half length.
    pub half_length: f64,
    /// Half width.
    pub half_width: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, yaw: f64, speed: f64, half_length: f64, half_width: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
            v_lon: speed,
            v_lat: 0.0,
            half_length,
            half_width,
        }
    }

    pub fn speed(&self) -> f64 {
        self.v_lon.hypot(self.v_lat)
    }

    /// Velocity in world coordinates.
    pub fn world_velocity(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.v_lon * c - self.v_lat * s,
            self.v_lon * s + self.v_lat * c,
        ]
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.yaw, self.v_lon, self.v_lat]
            .iter()
            .all(|v| v.is_finite())
    }

    /// World coordinates of the four footprint corners, counter-clockwise.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (l, w) = (self.half_length, self.half_width);
        let local = [[l, w], [-l, w], [-l, -w], [l, -w]];
        local.map(|[a, b]| [self.x + a * c - b * s, self.y + a * s + b * c])
    }
}

/// Rotates a world-frame vector by `-yaw`.
#[inline]
pub fn rotate_into(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Adversary center expressed in the ego body frame.
pub fn to_ego_frame(ego: &KinematicState, adv: &KinematicState) -> (f64, f64) {
    let d = rotate_into(ego.yaw, [adv.x - ego.x, adv.y - ego.y]);
    (d[0], d[1])
}

/// Projected envelope of both footprints onto the ego axes.
pub fn envelope(ego: &KinematicState, adv: &KinematicState) -> (f64, f64) {
    let dpsi = adv.yaw - ego.yaw;
    let (c, s) = (dpsi.cos().abs(), dpsi.sin().abs());
    let s_x = ego.half_length + c * adv.half_length + s * adv.half_width;
    let s_y = ego.half_width + c * adv.half_width + s * adv.half_length;
    (s_x, s_y)
}

/// Everything about the ego/adversary pair that the feasibility score needs,
/// expressed in the ego body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeFrame {
    pub d_x_actual: f64,
    pub d_y_actual: f64,
    pub delta_psi: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub clearance_x: f64,
    pub clearance_y: f64,
    /// Closing speed along ego x, positive when `|d_x_actual|` shrinks.
    pub dv_x: f64,
    /// Closing speed along ego y, positive when `|d_y_actual|` shrinks.
    pub dv_y: f64,
    /// Ego velocity in its own frame.
    pub ego_vel: [f64; 2],
    /// Adversary velocity projected into the ego frame.
    pub adv_vel: [f64; 2],
}

impl RelativeFrame {
    pub fn new(ego: &KinematicState, adv: &KinematicState) -> Self {
        let (d_x, d_y) = to_ego_frame(ego, adv);
        let (s_x, s_y) = envelope(ego, adv);
        let ego_vel = [ego.v_lon, ego.v_lat];
        let adv_vel = rotate_into(ego.yaw, adv.world_velocity());
        // d/dt of the center offset, ignoring the rotation of the ego frame.
        let rate = [adv_vel[0] - ego_vel[0], adv_vel[1] - ego_vel[1]];
        let closing = |d: f64, r: f64| if d == 0.0 { -r.abs() } else { -d.signum() * r };
        Self {
            d_x_actual: d_x,
            d_y_actual: d_y,
            delta_psi: normalize_angle(adv.yaw - ego.yaw),
            s_x,
            s_y,
            clearance_x: d_x.abs() - s_x,
            clearance_y: d_y.abs() - s_y,
            dv_x: closing(d_x, rate[0]),
            dv_y: closing(d_y, rate[1]),
            ego_vel,
            adv_vel,
        }
    }

    /// Euclidean distance between the two centers.
    pub fn center_distance(&self) -> f64 {
        self.d_x_actual.hypot(self.d_y_actual)
    }
}

/// Separating-axis test for two oriented rectangles. Touching edges do not count.
pub fn obb_overlap(a: &KinematicState, b: &KinematicState) -> bool {
    let d = [b.x - a.x, b.y - a.y];
    let axes = |k: &KinematicState| {
        let (s, c) = k.yaw.sin_cos();
        [[c, s], [-s, c]]
    };
    let (ax, bx) = (axes(a), axes(b));
    let radius = |k: &KinematicState, ka: &[[f64; 2]; 2], n: [f64; 2]| {
        k.half_length * (ka[0][0] * n[0] + ka[0][1] * n[1]).abs()
            + k.half_width * (ka[1][0] * n[0] + ka[1][1] * n[1]).abs()
    };
    ax.iter().chain(bx.iter()).all(|&n| {
        let dist = (d[0] * n[0] + d[1] * n[1]).abs();
        dist < radius(a, &ax, n) + radius(b, &bx, n)
    })
}
