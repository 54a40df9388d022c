//! Post-hoc metrics over episode logs.

use crate::error::{Error, Result};
use crate::microsim::EpisodeLog;

pub const GCS_BINS: usize = 40;
pub const DEFAULT_TAIL_S: f64 = 0.8;

/// Collided episodes over all episodes.
pub fn collision_rate(logs: &[EpisodeLog]) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::Input("collision rate of an empty log set".into()));
    }
    let hits = logs.iter().filter(|l| l.summary.collided).count();
    Ok(hits as f64 / logs.len() as f64)
}

/// Number of frames dropped before an impact.
pub fn tail_frames(tail_s: f64, dt: f64) -> usize {
    // tolerate 0.8 / 0.1 = 8.000000000000002
    ((tail_s / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Counts `(negative, total)` surviving frames of one log.
///
/// In a collided episode whose impact frame has index `c`, a frame with index
/// `k` survives when `k + tail <= c`; the impact frame itself never does.
pub fn invalid_counts(log: &EpisodeLog, tail: usize) -> (usize, usize) {
    let frames = &log.frames;
    let keep = if log.summary.collided {
        match frames.iter().position(|f| f.collision) {
            Some(c) if c >= tail => (c - tail + 1).min(c),
            Some(_) => 0,
            None => frames.len(),
        }
    } else {
        frames.len()
    };
    let neg = frames[..keep].iter().filter(|f| f.sigma < 0.0).count();
    (neg, keep)
}

/// Fraction of surviving pre-collision frames with `sigma < 0`.
pub fn phys_invalid_rate(logs: &[EpisodeLog], tail_s: f64, dt: f64) -> f64 {
    let tail = tail_frames(tail_s, dt);
    let (neg, total) = logs
        .iter()
        .map(|l| invalid_counts(l, tail))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        0.0
    } else {
        neg as f64 / total as f64
    }
}

/// Bin of a value in `[0, 1]`; cell boundaries go to the lower cell.
pub fn bin(v: f64, k: usize) -> usize {
    let c = (v.clamp(0.0, 1.0) * k as f64).ceil() as usize;
    c.saturating_sub(1).min(k - 1)
}

/// Occupied cells over `K x K` for `(phi, sigma)` pairs.
pub fn occupancy(pairs: &[(f64, f64)], k: usize) -> Vec<bool> {
    let mut grid = vec![false; k * k];
    for &(phi, sigma) in pairs {
        grid[bin(phi, k) * k + bin(sigma, k)] = true;
    }
    grid
}

/// Gap frames: `sigma > 0` inside a collided episode.
pub fn gap_pairs(logs: &[EpisodeLog]) -> Vec<(f64, f64)> {
    logs.iter()
        .filter(|l| l.summary.collided)
        .flat_map(|l| {
            l.frames
                .iter()
                .filter(|f| f.sigma > 0.0)
                .map(|f| (f.phi, f.sigma))
        })
        .collect()
}

/// Gap Coverage Score from raw frame pairs and their episodes' collision flags.
pub fn gap_coverage_score_pairs(pairs: &[(f64, f64)], collided: &[bool], k: usize) -> f64 {
    let gap: Vec<(f64, f64)> = pairs
        .iter()
        .zip(collided)
        .filter(|&(&(_, s), &c)| c && s > 0.0)
        .map(|(&p, _)| p)
        .collect();
    let occ = occupancy(&gap, k);
    occ.iter().filter(|&&b| b).count() as f64 / (k * k) as f64
}

pub fn gap_coverage_score(logs: &[EpisodeLog], k: usize) -> f64 {
    let occ = occupancy(&gap_pairs(logs), k);
    occ.iter().filter(|&&b| b).count() as f64 / (k * k) as f64
}

/// Entry `(i, j)` is the fraction of pairs with `phi >= phi_thr[i]` and `sigma >= sigma_thr[j]`.
pub fn coverage_grid(pairs: &[(f64, f64)], phi_thr: &[f64], sigma_thr: &[f64]) -> Vec<Vec<f64>> {
    let n = pairs.len().max(1) as f64;
    phi_thr
        .iter()
        .map(|&pt| {
            sigma_thr
                .iter()
                .map(|&st| pairs.iter().filter(|&&(p, s)| p >= pt && s >= st).count() as f64 / n)
                .collect()
        })
        .collect()
}

pub fn frame_pairs(logs: &[EpisodeLog]) -> Vec<(f64, f64)> {
    logs.iter()
        .flat_map(|l| l.frames.iter().map(|f| (f.phi, f.sigma)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub episodes: usize,
    pub collision_rate: f64,
    pub phys_invalid_rate: f64,
    pub gcs: f64,
}

pub fn report(logs: &[EpisodeLog], dt: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        episodes: logs.len(),
        collision_rate: collision_rate(logs)?,
        phys_invalid_rate: phys_invalid_rate(logs, DEFAULT_TAIL_S, dt),
        gcs: gap_coverage_score(logs, GCS_BINS),
    })
}

/// Ranking key for the top-k selection: collided first, then higher mean risk
/// over the final `window` frames, then the smaller positive score minimum.
pub fn criticality_key(log: &EpisodeLog, window: usize) -> (bool, f64, f64) {
    let n = log.frames.len();
    let tail = &log.frames[n.saturating_sub(window)..];
    let mean_phi = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|f| f.phi).sum::<f64>() / tail.len() as f64
    };
    let min_pos = log
        .frames
        .iter()
        .map(|f| f.sigma)
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    (log.summary.collided, mean_phi, min_pos)
}

/// Indices of the `k` most critical logs, best first; ties keep the lower episode index.
pub fn rank_topk(logs: &[EpisodeLog], k: usize, window: usize) -> Vec<usize> {
    let keys: Vec<_> = logs.iter().map(|l| criticality_key(l, window)).collect();
    let mut idx: Vec<usize> = (0..logs.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (&keys[a], &keys[b]);
        kb.0.cmp(&ka.0)
            .then(kb.1.total_cmp(&ka.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(logs[a].summary.episode.cmp(&logs[b].summary.episode))
    });
    idx.truncate(k);
    idx
}
