//! Online-learned per-frame AV-risk estimate.
//!
//! The critic regresses a potential-shaped TD target with a weighted binary
//! cross-entropy. Because the shaping term telescopes, the learned value is
//! the discounted collision-to-go shifted down by the potential of the
//! current state; adding the potential back recovers the unshifted risk.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RelativeFrame;
use crate::nn::{sigmoid, Adam, Mlp};

/// Center distances below this are floored, which keeps the potential bounded.
pub const DISTANCE_FLOOR: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("non-finite critic gradient (loss {loss}); step skipped")]
    NonFinite { loss: f64 },
    #[error("empty training batch")]
    EmptyBatch,
}

/// Which samples receive the high-risk weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Targets above the high-risk threshold.
    HighTarget,
    /// Transitions that end in a collision.
    CollisionIndicator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub w_plus: f64,
    pub high_risk_threshold: f64,
    pub weight_rule: WeightRule,
    pub kappa: f64,
    pub tau: f64,
    /// Transitions drawn per critic step.
    pub batch_size: usize,
    /// Replay capacity for the online stream.
    pub buffer_capacity: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-3,
            gamma: 0.95,
            w_plus: 50.0,
            high_risk_threshold: 0.85,
            weight_rule: WeightRule::HighTarget,
            kappa: 1.0,
            tau: 0.01,
            batch_size: 64,
            buffer_capacity: 20_000,
        }
    }
}

/// Six interaction features fed to the critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskFeatures {
    pub lon_clearance: f64,
    pub lat_clearance: f64,
    pub lon_closing: f64,
    pub lat_closing: f64,
    pub inv_distance: f64,
    pub cos_dpsi: f64,
}

impl RiskFeatures {
    pub const DIM: usize = 6;

    pub fn from_relative(rel: &RelativeFrame, far_cap: f64) -> Self {
        Self {
            lon_clearance: rel.clearance_x.clamp(-far_cap, far_cap),
            lat_clearance: rel.clearance_y.clamp(-far_cap, far_cap),
            lon_closing: rel.dv_x,
            lat_closing: rel.dv_y,
            inv_distance: 1.0 / rel.center_distance().max(DISTANCE_FLOOR),
            cos_dpsi: rel.delta_psi.cos(),
        }
    }

    /// Scaled network input.
    pub fn to_input(&self) -> [f64; 6] {
        [
            (self.lon_clearance / 20.0).clamp(-5.0, 5.0),
            (self.lat_clearance / 10.0).clamp(-5.0, 5.0),
            (self.lon_closing / 10.0).clamp(-5.0, 5.0),
            (self.lat_closing / 10.0).clamp(-5.0, 5.0),
            self.inv_distance,
            self.cos_dpsi,
        ]
    }
}

/// `kappa / d`, with `d` floored.
pub fn potential(distance: f64, kappa: f64) -> f64 {
    kappa / distance.max(DISTANCE_FLOOR)
}

/// Collision indicator plus the potential-difference shaping term.
pub fn shaped_reward(collision: bool, f_s: f64, f_next: f64, gamma: f64) -> f64 {
    f64::from(u8::from(collision)) + gamma * f_next - f_s
}

/// Bootstrapped target, clipped to `[0, 1]`.
pub fn td_target(r_shaped: f64, done: bool, phi_tgt_next: f64, gamma: f64) -> f64 {
    let boot = if done { 0.0 } else { gamma * phi_tgt_next };
    (r_shaped + boot).clamp(0.0, 1.0)
}

pub fn sample_weight(target: f64, collision: bool, cfg: &RiskConfig) -> f64 {
    let high = match cfg.weight_rule {
        WeightRule::HighTarget => target > cfg.high_risk_threshold,
        WeightRule::CollisionIndicator => collision,
    };
    if high {
        cfg.w_plus
    } else {
        1.0
    }
}

/// Binary cross-entropy of prediction `p` against soft target `y`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Unshifted risk from the shifted estimate and the potential.
pub fn recover_phi(phi_hat: f64, potential: f64) -> f64 {
    (phi_hat + potential).clamp(0.0, 1.0)
}

/// One training example for the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskSample {
    pub input: Vec<f64>,
    pub target: f64,
    pub collision: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Online critic, its slowly-trailing target copy and optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCritic {
    pub online: Mlp,
    pub target: Mlp,
    pub opt: Adam,
    pub cfg: RiskConfig,
}

impl RiskCritic {
    pub fn new<R: Rng + ?Sized>(cfg: RiskConfig, rng: &mut R) -> Self {
        Self::with_input_dim(RiskFeatures::DIM, cfg, rng)
    }

    pub fn with_input_dim<R: Rng + ?Sized>(input_dim: usize, cfg: RiskConfig, rng: &mut R) -> Self {
        let online = Mlp::new(&[input_dim, cfg.hidden, cfg.hidden, 1], 1.0, rng);
        let opt = Adam::new(online.num_params(), cfg.lr);
        Self {
            target: online.clone(),
            online,
            opt,
            cfg,
        }
    }

    /// Shifted risk estimate from the online network.
    pub fn predict(&self, input: &[f64]) -> f64 {
        sigmoid(self.online.forward(input)[0])
    }

    pub fn predict_target(&self, input: &[f64]) -> f64 {
        sigmoid(self.target.forward(input)[0])
    }

    /// Unshifted risk for a frame at center distance `distance`.
    pub fn phi(&self, features: &RiskFeatures, distance: f64) -> f64 {
        recover_phi(
            self.predict(&features.to_input()),
            potential(distance, self.cfg.kappa),
        )
    }

    /// Weighted-BCE loss and its parameter gradient, without updating.
    pub fn loss_and_grad(&self, batch: &[RiskSample]) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.online.num_params()];
        let mut loss = 0.0;
        for s in batch {
            let w = sample_weight(s.target, s.collision, &self.cfg);
            let tr = self.online.trace(&s.input);
            let p = sigmoid(tr.output()[0]);
            loss += w * bce(p, s.target);
            // d BCE / d logit = p - y
            self.online
                .backward(&tr, &[w * (p - s.target) / n], &mut grad);
        }
        (loss / n, grad)
    }

    /// One Adam step on the weighted BCE followed by a Polyak update of the target.
    pub fn train_step(&mut self, batch: &[RiskSample]) -> Result<StepStats, RiskError> {
        if batch.is_empty() {
            return Err(RiskError::EmptyBatch);
        }
        // f64::max swallows NaN inside ReLU, so inputs are checked up front
        if batch
            .iter()
            .any(|s| !s.target.is_finite() || s.input.iter().any(|x| !x.is_finite()))
        {
            log::warn!("risk critic: non-finite sample in batch, skipping");
            return Err(RiskError::NonFinite { loss: f64::NAN });
        }
        let (loss, grad) = self.loss_and_grad(batch);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            log::warn!("risk critic: non-finite loss {loss} / grad norm {grad_norm}, skipping");
            return Err(RiskError::NonFinite { loss });
        }
        self.opt.step(self.online.params_mut(), &grad);
        self.polyak();
        Ok(StepStats { loss, grad_norm })
    }

    pub fn polyak(&mut self) {
        let tau = self.cfg.tau;
        for (t, o) in self
            .target
            .params_mut()
            .iter_mut()
            .zip(self.online.params())
        {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
}

/// FIFO of recent transitions for the online critic.
#[derive(Clone, Debug, Default)]
pub struct Transition {
    pub input: [f64; 6],
    pub next_input: [f64; 6],
    pub f_s: f64,
    pub f_next: f64,
    pub collision: bool,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    head: usize,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Flat layout for checkpoints: 16 values per transition, in storage order.
    pub fn to_flat(&self) -> (Vec<f64>, usize, usize) {
        let mut v = Vec::with_capacity(self.items.len() * 16);
        for t in &self.items {
            v.extend_from_slice(&t.input);
            v.extend_from_slice(&t.next_input);
            v.extend([
                t.f_s,
                t.f_next,
                t.collision as u8 as f64,
                t.done as u8 as f64,
            ]);
        }
        (v, self.head, self.capacity)
    }

    pub fn from_flat(v: &[f64], head: usize, capacity: usize) -> Option<Self> {
        if v.len() % 16 != 0 || v.len() / 16 > capacity.max(1) || (head > 0 && head >= capacity) {
            return None;
        }
        let items = v
            .chunks_exact(16)
            .map(|c| Transition {
                input: c[0..6].try_into().expect("6"),
                next_input: c[6..12].try_into().expect("6"),
                f_s: c[12],
                f_next: c[13],
                collision: c[14] != 0.0,
                done: c[15] != 0.0,
            })
            .collect();
        Some(Self {
            items,
            head,
            capacity: capacity.max(1),
        })
    }

    /// Samples a batch and turns it into critic samples using the target net.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        critic: &RiskCritic,
        n: usize,
        rng: &mut R,
    ) -> Vec<RiskSample> {
        let g = critic.cfg.gamma;
        (0..n.min(self.items.len()))
            .map(|_| {
                let t = &self.items[rng.random_range(0..self.items.len())];
                let r = shaped_reward(t.collision, t.f_s, t.f_next, g);
                let next = if t.done {
                    0.0
                } else {
                    critic.predict_target(&t.next_input)
                };
                RiskSample {
                    input: t.input.to_vec(),
                    target: td_target(r, t.done, next, g),
                    collision: t.collision,
                }
            })
            .collect()
    }
}
