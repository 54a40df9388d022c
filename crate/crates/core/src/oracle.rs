//! Brute-force avoidability checks used to validate the feasibility score.
//!
//! `braking_oracle_1d` integrates two braking vehicles exactly (piecewise
//! quadratic positions) over a grid of per-step deceleration choices.
//! `escape_oracle_2d` searches piecewise-constant ego accelerations on a
//! lon x lat grid against a constant-velocity adversary.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::feasibility::{sigma, FeasibilityParams, Mode};
use crate::geometry::{obb_overlap, KinematicState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Avoidable,
    Unavoidable,
    Unknown,
}

/// How the two vehicles of a 1D configuration move relative to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Driving toward each other. The `r` vehicle is searched, `f` brakes at its bound.
    HeadOn,
    /// Same heading, `r` behind `f`. The front brakes at its bound, the rear is searched.
    Following,
}

/// Result of the 1D search with the number of frontier nodes expanded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oracle1d {
    pub verdict: Verdict,
    pub expanded: usize,
}

const GAP_TOL: f64 = 1e-9;

/// Displacement after `t` seconds of braking at `a` from speed `v`.
fn brake_disp(v: f64, a: f64, t: f64) -> f64 {
    if a <= 0.0 {
        return v * t;
    }
    let ts = v / a;
    if t >= ts {
        v * v / (2.0 * a)
    } else {
        v * t - 0.5 * a * t * t
    }
}

/// Smallest gap over one step when both vehicles brake at constant rates.
fn min_gap_in_step(gap: f64, v_r: f64, a_r: f64, v_f: f64, a_f: f64, sign_f: f64, dt: f64) -> f64 {
    let gap_at = |t: f64| gap - brake_disp(v_r, a_r, t) - sign_f * brake_disp(v_f, a_f, t);
    let stop = |v: f64, a: f64| if a > 0.0 { v / a } else { f64::INFINITY };
    let mut cuts = vec![0.0, dt];
    for ts in [stop(v_r, a_r), stop(v_f, a_f)] {
        if ts > 0.0 && ts < dt {
            cuts.push(ts);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut best = cuts
        .iter()
        .map(|&t| gap_at(t))
        .fold(f64::INFINITY, f64::min);
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        // velocity and deceleration of the gap on this piece
        let moving = |v: f64, a: f64| v - a * mid > 0.0;
        let (mut vel, mut acc) = (0.0, 0.0);
        if moving(v_r, a_r) {
            vel += v_r;
            acc += a_r;
        }
        if moving(v_f, a_f) {
            vel += sign_f * v_f;
            acc += sign_f * a_f;
        }
        if acc > 0.0 {
            let t_star = vel / acc;
            if t_star > w[0] && t_star < w[1] {
                best = best.min(gap_at(t_star));
            }
        }
    }
    best
}

/// Exhaustive braking search for a 1D encounter.
///
/// Every step the searched vehicle picks one of `levels` decelerations in
/// `[0, a_r]`. Nodes are kept on a Pareto frontier (larger gap, lower speed)
/// per step. Avoidable iff some sequence reaches a state with both vehicles
/// stopped (or the searched rear no faster than a stopped front) without the
/// gap going negative.
pub fn braking_oracle_1d(
    gap: f64,
    v_r: f64,
    v_f: f64,
    a_r: f64,
    a_f: f64,
    approach: Approach,
    dt: f64,
    max_steps: usize,
    levels: usize,
) -> Oracle1d {
    let sign_f = match approach {
        Approach::HeadOn => 1.0,
        Approach::Following => -1.0,
    };
    if gap < -GAP_TOL {
        return Oracle1d {
            verdict: Verdict::Unavoidable,
            expanded: 0,
        };
    }
    let levels = levels.max(2);
    let decels: Vec<f64> = (0..levels)
        .rev()
        .map(|i| a_r * i as f64 / (levels - 1) as f64)
        .collect();
    let mut frontier = vec![(gap, v_r)];
    let mut vf = v_f;
    let mut expanded = 0;
    for _ in 0..max_steps {
        let mut next = Vec::new();
        for &(g, v) in &frontier {
            expanded += 1;
            if v <= 0.0 && vf <= 0.0 {
                return Oracle1d {
                    verdict: Verdict::Avoidable,
                    expanded,
                };
            }
            for &a in &decels {
                if min_gap_in_step(g, v, a, vf, a_f, sign_f, dt) < -GAP_TOL {
                    continue;
                }
                let g2 = g - brake_disp(v, a, dt) - sign_f * brake_disp(vf, a_f, dt);
                next.push((g2, (v - a * dt).max(0.0)));
            }
        }
        if next.is_empty() {
            return Oracle1d {
                verdict: Verdict::Unavoidable,
                expanded,
            };
        }
        vf = (vf - a_f * dt).max(0.0);
        next.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        frontier.clear();
        let mut v_min = f64::INFINITY;
        for (g, v) in next {
            if v < v_min {
                v_min = v;
                frontier.push((g, v));
            }
        }
    }
    log::warn!(
        "braking oracle: horizon of {max_steps} steps exhausted before both vehicles stopped"
    );
    Oracle1d {
        verdict: Verdict::Unavoidable,
        expanded,
    }
}

/// Ego control limits for the escape search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoBounds {
    pub lon_brake: f64,
    pub lon_accel: f64,
    pub lat: f64,
}

impl Default for EgoBounds {
    fn default() -> Self {
        Self {
            lon_brake: 3.0,
            lon_accel: 2.0,
            lat: 2.0,
        }
    }
}

impl EgoBounds {
    pub fn from_params(p: &FeasibilityParams, lon_accel: f64) -> Self {
        Self {
            lon_brake: p.a_ego_lon_brake_max,
            lon_accel,
            lat: p.a_ego_lat_brake_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Steps each control choice is held for.
    pub hold_steps: usize,
    pub lon_levels: usize,
    pub lat_levels: usize,
    /// Collision checks per simulation step.
    pub substeps: usize,
    pub node_budget: usize,
    /// Walled corridor: lateral accelerations are disabled.
    pub corridor: bool,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 5.0,
            hold_steps: 5,
            lon_levels: 5,
            lat_levels: 5,
            substeps: 4,
            node_budget: 20_000,
            corridor: false,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Ego state during the search: heading is frozen, axes are independent.
#[derive(Clone, Copy, Debug)]
struct Pt {
    x: f64,
    y: f64,
    v_lon: f64,
    v_lat: f64,
}

struct Search<'a> {
    ego0: &'a KinematicState,
    adv0: &'a KinematicState,
    adv_vel: [f64; 2],
    cfg: &'a EscapeConfig,
    controls: Vec<(f64, f64)>,
    total_steps: usize,
    reach_acc: f64,
    reach_r: f64,
    nodes: usize,
    dead: HashSet<(usize, i64, i64, i64, i64)>,
}

impl Search<'_> {
    fn adv_at(&self, t: f64) -> KinematicState {
        KinematicState {
            x: self.adv0.x + self.adv_vel[0] * t,
            y: self.adv0.y + self.adv_vel[1] * t,
            ..*self.adv0
        }
    }

    fn ego_state(&self, p: &Pt) -> KinematicState {
        KinematicState {
            x: p.x,
            y: p.y,
            v_lon: p.v_lon,
            v_lat: p.v_lat,
            ..*self.ego0
        }
    }

    /// Advances one step; returns `None` on contact during the step.
    fn step(&self, p: &Pt, k: usize, a: (f64, f64)) -> Option<Pt> {
        let dt = self.cfg.dt;
        let v_lon = (p.v_lon + a.0 * dt).max(0.0);
        let v_lat = p.v_lat + a.1 * dt;
        let (s, c) = self.ego0.yaw.sin_cos();
        let (vx, vy) = (v_lon * c - v_lat * s, v_lon * s + v_lat * c);
        let n = self.cfg.substeps.max(1);
        for j in 1..=n {
            let f = j as f64 / n as f64;
            let q = Pt {
                x: p.x + vx * dt * f,
                y: p.y + vy * dt * f,
                v_lon,
                v_lat,
            };
            let t = (k as f64 + f) * dt;
            if obb_overlap(&self.ego_state(&q), &self.adv_at(t)) {
                return None;
            }
        }
        Some(Pt {
            x: p.x + vx * dt,
            y: p.y + vy * dt,
            v_lon,
            v_lat,
        })
    }

    /// True when no ego trajectory can reach the adversary before the horizon.
    fn separated(&self, p: &Pt, k: usize) -> bool {
        let dt = self.cfg.dt;
        let (s, c) = self.ego0.yaw.sin_cos();
        let (vx, vy) = (p.v_lon * c - p.v_lat * s, p.v_lon * s + p.v_lat * c);
        let v_max = p.v_lon.hypot(p.v_lat) + self.reach_acc * self.cfg.horizon;
        let v_rel = v_max + self.adv_vel[0].hypot(self.adv_vel[1]);
        for j in 0..=(self.total_steps - k) {
            let tau = j as f64 * dt;
            let t = (k + j) as f64 * dt;
            let a = self.adv_at(t);
            let (ex, ey) = (p.x + vx * tau, p.y + vy * tau);
            let reach = 0.5 * self.reach_acc * tau * (tau + dt) + v_rel * dt;
            if (ex - a.x).hypot(ey - a.y) <= self.reach_r + reach {
                return false;
            }
        }
        true
    }

    fn key(&self, p: &Pt, k: usize) -> (usize, i64, i64, i64, i64) {
        let q = |v: f64| (v / 0.02).round() as i64;
        (k, q(p.x), q(p.y), q(p.v_lon), q(p.v_lat))
    }

    fn dfs(&mut self, p: Pt, k: usize) -> Verdict {
        if k >= self.total_steps {
            return Verdict::Avoidable;
        }
        self.nodes += 1;
        if self.nodes > self.cfg.node_budget {
            return Verdict::Unknown;
        }
        let key = self.key(&p, k);
        if self.dead.contains(&key) {
            return Verdict::Unavoidable;
        }
        if self.separated(&p, k) {
            return Verdict::Avoidable;
        }
        // witness attempts: hold one control to the horizon
        let mut children = Vec::with_capacity(self.controls.len());
        for i in 0..self.controls.len() {
            let a = self.controls[i];
            let mut q = p;
            let mut prefix = None;
            let mut ok = true;
            for j in k..self.total_steps {
                match self.step(&q, j, a) {
                    Some(n) => q = n,
                    None => {
                        ok = false;
                        break;
                    }
                }
                if j + 1 == k + self.cfg.hold_steps {
                    prefix = Some(q);
                }
            }
            if ok {
                return Verdict::Avoidable;
            }
            if let Some(c) = prefix {
                let a = self.adv_at((k + self.cfg.hold_steps) as f64 * self.cfg.dt);
                children.push(((c.x - a.x).hypot(c.y - a.y), c));
            }
        }
        children.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut unknown = false;
        for (_, c) in children {
            match self.dfs(c, k + self.cfg.hold_steps) {
                Verdict::Avoidable => return Verdict::Avoidable,
                Verdict::Unknown => {
                    unknown = true;
                    if self.nodes > self.cfg.node_budget {
                        return Verdict::Unknown;
                    }
                }
                Verdict::Unavoidable => {}
            }
        }
        if unknown {
            Verdict::Unknown
        } else {
            self.dead.insert(key);
            Verdict::Unavoidable
        }
    }
}

/// Result of the escape search with the number of decision nodes visited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oracle2d {
    pub verdict: Verdict,
    pub nodes: usize,
}

/// Searches for an ego control plan that avoids a constant-velocity adversary.
pub fn escape_oracle_2d(
    ego: &KinematicState,
    adv: &KinematicState,
    bounds: &EgoBounds,
    cfg: &EscapeConfig,
) -> Oracle2d {
    if obb_overlap(ego, adv) {
        return Oracle2d {
            verdict: Verdict::Unavoidable,
            nodes: 0,
        };
    }
    let lon = linspace(-bounds.lon_brake, bounds.lon_accel, cfg.lon_levels);
    let lat = if cfg.corridor {
        vec![0.0]
    } else {
        linspace(-bounds.lat, bounds.lat, cfg.lat_levels)
    };
    // coast and hard braking first, then everything else
    let mut controls: Vec<(f64, f64)> = lon
        .iter()
        .flat_map(|&a| lat.iter().map(move |&b| (a, b)))
        .collect();
    controls.sort_by(|a, b| {
        let rank = |c: &(f64, f64)| {
            if c.0 == 0.0 && c.1 == 0.0 {
                0
            } else if c.0 == -bounds.lon_brake && c.1 == 0.0 {
                1
            } else {
                2
            }
        };
        rank(a).cmp(&rank(b))
    });
    let reach_acc = bounds
        .lon_brake
        .max(bounds.lon_accel)
        .hypot(if cfg.corridor { 0.0 } else { bounds.lat });
    let mut s = Search {
        ego0: ego,
        adv0: adv,
        adv_vel: adv.world_velocity(),
        cfg,
        controls,
        total_steps: (cfg.horizon / cfg.dt).round() as usize,
        reach_acc,
        reach_r: ego.half_length.hypot(ego.half_width) + adv.half_length.hypot(adv.half_width),
        nodes: 0,
        dead: HashSet::new(),
    };
    let start = Pt {
        x: ego.x,
        y: ego.y,
        v_lon: ego.v_lon.max(0.0),
        v_lat: ego.v_lat,
    };
    let verdict = s.dfs(start, 0);
    Oracle2d {
        verdict,
        nodes: s.nodes,
    }
}

/// Ego at the origin heading +x; adversary placed uniformly around it with a
/// random heading. Overlapping draws are rejected.
pub fn sample_state_2d<R: Rng + ?Sized>(rng: &mut R) -> (KinematicState, KinematicState) {
    let ego = KinematicState::new(0.0, 0.0, 0.0, rng.random_range(0.0..15.0), 2.4, 1.0);
    loop {
        let adv = KinematicState::new(
            rng.random_range(-20.0..30.0),
            rng.random_range(-12.0..12.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.0..15.0),
            2.4,
            1.0,
        );
        if !obb_overlap(&ego, &adv) {
            return (ego, adv);
        }
    }
}

/// One longitudinal-only encounter with its score and the oracle's verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Case1d {
    pub approach: Approach,
    pub ego_speed: f64,
    pub adv_speed: f64,
    pub adv_ahead: bool,
    pub clearance: f64,
    pub d_limit: f64,
    /// `(d_limit - clearance) / d_limit`, positive means predicted unavoidable.
    pub residual: f64,
    pub verdict: Verdict,
}

/// Draws a random aligned encounter and scores it both ways.
pub fn sample_case_1d<R: Rng + ?Sized>(rng: &mut R, params: &FeasibilityParams) -> Case1d {
    let head_on = rng.random_bool(0.5);
    let ego_speed = rng.random_range(0.0..20.0);
    let adv_speed = rng.random_range(0.0..20.0);
    let adv_ahead = head_on || rng.random_bool(0.5);
    let (hl, hw) = (2.4, 1.0);
    let ego = KinematicState::new(0.0, 0.0, 0.0, ego_speed, hl, hw);
    let probe_yaw = if head_on { std::f64::consts::PI } else { 0.0 };
    let side = if adv_ahead { 1.0 } else { -1.0 };
    // choose the clearance relative to the predicted boundary so both sides get sampled
    let probe = KinematicState::new(side * 1e3, 0.0, probe_yaw, adv_speed, hl, hw);
    let limit = sigma(&ego, &probe, params, Mode::PhysicsLimit).d_limit_x;
    let clearance = if limit > 0.0 {
        limit * rng.random_range(0.0..2.0)
    } else {
        rng.random_range(0.0..10.0)
    };
    let x = side * (clearance + 2.0 * hl);
    let adv = KinematicState::new(x, 0.0, probe_yaw, adv_speed, hl, hw);
    let rep = sigma(&ego, &adv, params, Mode::PhysicsLimit);
    let residual =
        (rep.d_limit_x - rep.clearance_x) / rep.d_limit_x.max(crate::feasibility::LIMIT_FLOOR);

    let (a_e, a_a) = (params.a_ego_lon_brake_max, params.a_npc_lon_brake_max);
    let (v_r, v_f, a_r, a_f, approach) = if head_on {
        (ego_speed, adv_speed, a_e, a_a, Approach::HeadOn)
    } else if adv_ahead {
        (ego_speed, adv_speed, a_e, a_a, Approach::Following)
    } else {
        (adv_speed, ego_speed, a_a, a_e, Approach::Following)
    };
    let verdict = braking_oracle_1d(
        rep.clearance_x,
        v_r,
        v_f,
        a_r,
        a_f,
        approach,
        params.dt,
        100_000,
        5,
    )
    .verdict;
    Case1d {
        approach,
        ego_speed,
        adv_speed,
        adv_ahead,
        clearance: rep.clearance_x,
        d_limit: rep.d_limit_x,
        residual,
        verdict,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary1d {
    pub cases: usize,
    pub band_excluded: usize,
    pub agreements: usize,
    /// Predicted unavoidable, but the oracle found a braking plan.
    pub unsound: usize,
    /// Predicted avoidable, but the oracle found none.
    pub missed: usize,
}

impl Summary1d {
    pub fn agreement_rate(&self) -> f64 {
        let scored = self.cases - self.band_excluded;
        if scored == 0 {
            1.0
        } else {
            self.agreements as f64 / scored as f64
        }
    }
}

pub fn campaign_1d<R: Rng + ?Sized>(
    rng: &mut R,
    params: &FeasibilityParams,
    cases: usize,
    band: f64,
) -> (Summary1d, Vec<Case1d>) {
    let mut s = Summary1d {
        cases,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(cases);
    for _ in 0..cases {
        let c = sample_case_1d(rng, params);
        if c.residual.abs() < band {
            s.band_excluded += 1;
        } else {
            let predicted_unavoidable = c.residual > 0.0;
            match (predicted_unavoidable, c.verdict) {
                (true, Verdict::Unavoidable) | (false, Verdict::Avoidable) => s.agreements += 1,
                (true, _) => s.unsound += 1,
                (false, _) => s.missed += 1,
            }
        }
        out.push(c);
    }
    (s, out)
}

/// One random 2D state with its score and the escape verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Case2d {
    pub ego: KinematicState,
    pub adv: KinematicState,
    pub sigma: f64,
    pub verdict: Verdict,
    pub nodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary2d {
    pub cases: usize,
    pub unknown: usize,
    /// Cases with `sigma < -band`.
    pub predicted_unavoidable: usize,
    pub confirmed: usize,
    /// `sigma < -band` but an escape plan exists.
    pub counterexamples: usize,
    /// Cases with `sigma >= 0`.
    pub predicted_solvable: usize,
    /// `sigma >= 0` and an escape plan was found.
    pub solvable_escaped: usize,
}

impl Summary2d {
    pub fn unknown_rate(&self) -> f64 {
        self.unknown as f64 / self.cases.max(1) as f64
    }
}

pub fn score_case_2d(
    ego: KinematicState,
    adv: KinematicState,
    params: &FeasibilityParams,
    bounds: &EgoBounds,
    cfg: &EscapeConfig,
) -> Case2d {
    let s = sigma(&ego, &adv, params, Mode::PhysicsLimit).sigma;
    let r = escape_oracle_2d(&ego, &adv, bounds, cfg);
    Case2d {
        ego,
        adv,
        sigma: s,
        verdict: r.verdict,
        nodes: r.nodes,
    }
}

pub fn summarize_2d(cases: &[Case2d], band: f64) -> Summary2d {
    let mut s = Summary2d {
        cases: cases.len(),
        ..Default::default()
    };
    for c in cases {
        if c.verdict == Verdict::Unknown {
            s.unknown += 1;
            continue;
        }
        if c.sigma < -band {
            s.predicted_unavoidable += 1;
            match c.verdict {
                Verdict::Unavoidable => s.confirmed += 1,
                _ => s.counterexamples += 1,
            }
        }
        if c.sigma >= 0.0 {
            s.predicted_solvable += 1;
            if c.verdict == Verdict::Avoidable {
                s.solvable_escaped += 1;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head_on(gap: f64) -> Verdict {
        braking_oracle_1d(gap, 10.0, 10.0, 4.0, 4.0, Approach::HeadOn, 0.1, 10_000, 5).verdict
    }

    #[test]
    fn head_on_examples() {
        assert_eq!(head_on(20.0), Verdict::Unavoidable);
        assert_eq!(head_on(30.0), Verdict::Avoidable);
        // exactly at the limit the vehicles stop touching, which is not a collision
        assert_eq!(head_on(25.0), Verdict::Avoidable);
        assert_eq!(head_on(24.99), Verdict::Unavoidable);
        let r = braking_oracle_1d(0.0, 0.0, 0.0, 3.0, 4.0, Approach::HeadOn, 0.1, 10, 5);
        assert_eq!(r.verdict, Verdict::Avoidable);
    }

    #[test]
    fn following_matches_closed_form_boundary() {
        // v_r=20, v_f=10, a_r=4, a_f=2: boundary 25 m, reached at the equal-speed instant
        let f = |g| {
            braking_oracle_1d(g, 20.0, 10.0, 4.0, 2.0, Approach::Following, 0.1, 10_000, 5).verdict
        };
        assert_eq!(f(24.9), Verdict::Unavoidable);
        assert_eq!(f(25.1), Verdict::Avoidable);
        // front stops first: boundary is the stop-distance difference 43.75 m
        let f = |g| {
            braking_oracle_1d(g, 20.0, 5.0, 4.0, 2.0, Approach::Following, 0.1, 10_000, 5).verdict
        };
        assert_eq!(f(43.6), Verdict::Unavoidable);
        assert_eq!(f(43.9), Verdict::Avoidable);
    }

    #[test]
    fn min_gap_finds_interior_minimum() {
        // rear 20 m/s braking 4, front 10 m/s braking 2: gap derivative vanishes at t=5
        let g = min_gap_in_step(30.0, 20.0, 4.0, 10.0, 2.0, -1.0, 10.0);
        assert!((g - 5.0).abs() < 1e-9, "{g}");
    }

    #[test]
    fn zero_brake_bound_overflows_to_unavoidable() {
        let r = braking_oracle_1d(5.0, 1.0, 0.0, 0.0, 4.0, Approach::HeadOn, 0.1, 20, 5);
        assert_eq!(r.verdict, Verdict::Unavoidable);
    }

    #[test]
    fn larger_brakes_never_hurt_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let (g, vr, vf) = (
                rng.random_range(0.0..60.0),
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..20.0),
            );
            let a = rng.random_range(1.0..5.0);
            let ap = if rng.random_bool(0.5) {
                Approach::HeadOn
            } else {
                Approach::Following
            };
            let small = braking_oracle_1d(g, vr, vf, a, 3.0, ap, 0.1, 10_000, 5).verdict;
            let big = braking_oracle_1d(g, vr, vf, 2.0 * a, 3.0, ap, 0.1, 10_000, 5).verdict;
            if small == Verdict::Avoidable {
                assert_eq!(big, Verdict::Avoidable);
            }
        }
    }

    #[test]
    fn far_receding_is_avoidable_without_search() {
        let ego = KinematicState::new(0.0, 0.0, 0.0, 10.0, 2.4, 1.0);
        let adv = KinematicState::new(200.0, 0.0, 0.0, 15.0, 2.4, 1.0);
        let r = escape_oracle_2d(&ego, &adv, &EgoBounds::default(), &EscapeConfig::default());
        assert_eq!(r.verdict, Verdict::Avoidable);
        assert_eq!(r.nodes, 1);
    }

    #[test]
    fn walled_head_on_reduces_to_braking() {
        let ego = KinematicState::new(0.0, 0.0, 0.0, 10.0, 2.4, 1.0);
        let adv = KinematicState::new(20.0 + 4.8, 0.0, std::f64::consts::PI, 10.0, 2.4, 1.0);
        let cfg = EscapeConfig {
            corridor: true,
            ..Default::default()
        };
        let r = escape_oracle_2d(&ego, &adv, &EgoBounds::default(), &cfg);
        assert_eq!(r.verdict, Verdict::Unavoidable);
        // a stationary obstacle 30 m ahead can be braked for in the corridor
        let wall = KinematicState::new(30.0 + 4.8, 0.0, 0.0, 0.0, 2.4, 1.0);
        assert_eq!(
            escape_oracle_2d(&ego, &wall, &EgoBounds::default(), &cfg).verdict,
            Verdict::Avoidable
        );
    }

    #[test]
    fn frontal_with_lateral_room() {
        // 5 m inside the 25 m head-on boundary with room to swerve
        let ego = KinematicState::new(0.0, 0.0, 0.0, 10.0, 2.4, 1.0);
        let adv = KinematicState::new(20.0 + 4.8, 0.0, std::f64::consts::PI, 10.0, 2.4, 1.0);
        let rep = sigma(
            &ego,
            &adv,
            &FeasibilityParams::default(),
            Mode::PhysicsLimit,
        );
        let t = 20.0 / 20.0;
        assert!((rep.t - t).abs() < 1e-9);
        let r = escape_oracle_2d(&ego, &adv, &EgoBounds::default(), &EscapeConfig::default());
        // swerving 2 m (full width) at 2 m/s^2 needs ~1.41 s; impact comes at 1 s
        assert_eq!(r.verdict, Verdict::Unavoidable);
        let far = KinematicState::new(40.0 + 4.8, 0.0, std::f64::consts::PI, 10.0, 2.4, 1.0);
        let r = escape_oracle_2d(&ego, &far, &EgoBounds::default(), &EscapeConfig::default());
        assert_eq!(r.verdict, Verdict::Avoidable);
    }

    #[test]
    fn sampler_never_overlaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (e, a) = sample_state_2d(&mut rng);
            assert!(!obb_overlap(&e, &a));
        }
    }
}
