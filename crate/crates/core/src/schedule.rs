//! Gaussian-shaped feasibility-threshold levels and the cyclic sweep.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsSchedule {
    pub n_levels: usize,
    pub eps_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub switch_every: u64,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        Self {
            n_levels: 8,
            eps_max: 0.35,
            u_min: -3.0,
            u_max: 0.0,
            switch_every: 100,
        }
    }
}

fn std_normal_cdf(u: f64) -> f64 {
    Normal::standard().cdf(u)
}

/// Levels `eps_1 .. eps_N`, normalized so the ends are exactly `0` and `eps_max`.
pub fn levels(n: usize, eps_max: f64, u_min: f64, u_max: f64) -> Result<Vec<f64>, String> {
    if n < 2 {
        return Err(format!("schedule.n_levels must be >= 2 (got {n})"));
    }
    if u_min.partial_cmp(&u_max) != Some(std::cmp::Ordering::Less) {
        return Err(format!(
            "schedule needs u_min < u_max (got {u_min}, {u_max})"
        ));
    }
    if !(eps_max.is_finite() && eps_max >= 0.0) {
        return Err(format!(
            "schedule.eps_max must be finite and >= 0 (got {eps_max})"
        ));
    }
    let lo = std_normal_cdf(u_min);
    let span = std_normal_cdf(u_max) - lo;
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            if i == n - 1 {
                return eps_max;
            }
            let u = u_min + (u_max - u_min) * i as f64 / (n - 1) as f64;
            eps_max * (std_normal_cdf(u) - lo) / span
        })
        .collect())
}

impl EpsSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.switch_every == 0 {
            return Err("schedule.switch_every must be > 0".into());
        }
        levels(self.n_levels, self.eps_max, self.u_min, self.u_max).map(|_| ())
    }

    pub fn levels(&self) -> Vec<f64> {
        levels(self.n_levels, self.eps_max, self.u_min, self.u_max)
            .expect("schedule validated before use")
    }

    /// Zero-based level index for an episode.
    pub fn level_index(&self, episode: u64) -> usize {
        ((episode / self.switch_every) % self.n_levels as u64) as usize
    }

    /// Active threshold and its one-based level number.
    pub fn active(&self, episode: u64) -> (f64, usize) {
        let i = self.level_index(episode);
        (self.levels()[i], i + 1)
    }

    /// True when `episode` starts a new level visit.
    pub fn is_switch(&self, episode: u64) -> bool {
        episode % self.switch_every == 0
    }
}
