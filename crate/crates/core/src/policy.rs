//! Scenario policy: Gaussian actor over adversary accelerations, two-headed
//! value critic, per-component GAE, step-level shielding and a clipped
//! surrogate update.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotate_into, RelativeFrame};
use crate::microsim::{ControlBounds, Observation};
use crate::nn::{clip_grad_norm, Adam, Mlp};

pub const STATE_DIM: usize = 12;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// The threshold feature is divided by this so the default sweep spans `[0, 1]`.
pub const EPS_FEATURE_SCALE: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eta: f64,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub c_ent: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    /// Value heads predict returns divided by this factor.
    pub value_scale: f64,
    pub normalize_advantages: bool,
    /// Initial log standard deviation of the actor.
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            gamma: 0.99,
            lambda: 0.95,
            clip_eta: 0.25,
            batch_size: 2048,
            minibatch_size: 32,
            epochs: 1,
            c_ent: 0.03,
            lr: 1e-4,
            max_grad_norm: 0.5,
            value_scale: 10.0,
            normalize_advantages: true,
            init_log_std: -0.5,
        }
    }
}

/// Twelve-feature policy input.
pub fn policy_state(obs: &Observation<'_>, far_cap: f64) -> [f64; STATE_DIM] {
    let rel = RelativeFrame::new(obs.ego, obs.adv);
    let dv = [
        rel.adv_vel[0] - rel.ego_vel[0],
        rel.adv_vel[1] - rel.ego_vel[1],
    ];
    let adv_heading = crate::geometry::normalize_angle(obs.adv.yaw - obs.ego.yaw);
    let clip = |v: f64, s: f64| (v / s).clamp(-5.0, 5.0);
    [
        clip(rel.d_x_actual, 20.0),
        clip(rel.d_y_actual, 20.0),
        clip(dv[0], 10.0),
        clip(dv[1], 10.0),
        obs.ego.speed() / 10.0,
        obs.ego_heading_error(),
        obs.adv.speed() / 10.0,
        adv_heading / std::f64::consts::PI,
        clip(rel.clearance_x, 20.0),
        clip(rel.clearance_y, 20.0),
        obs.report.t.min(far_cap).min(10.0) / 10.0,
        obs.eps / EPS_FEATURE_SCALE,
    ]
}

/// Maps an unbounded action sample to accelerations inside `bounds`.
pub fn squash(u: [f64; 2], b: &ControlBounds) -> [f64; 2] {
    let lon_c = 0.5 * (b.lon_accel - b.lon_brake);
    let lon_h = 0.5 * (b.lon_accel + b.lon_brake);
    [lon_c + lon_h * u[0].tanh(), b.lat * u[1].tanh()]
}

/// Squashes a raw head output into the admissible log-std range.
fn bounded_log_std(z: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (z.tanh() + 1.0)
}

fn d_bounded_log_std(z: f64) -> f64 {
    let t = z.tanh();
    0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
}

fn inv_bounded_log_std(ls: f64) -> f64 {
    let t = 2.0 * (ls - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN) - 1.0;
    t.clamp(-0.999_999, 0.999_999).atanh()
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Actor and critic with their optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub cfg: PpoConfig,
}

/// Action sample with everything the update needs later.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub raw: [f64; 2],
    pub log_prob: f64,
    pub value: [f64; 2],
}

impl ScenarioPolicy {
    pub fn new<R: Rng + ?Sized>(cfg: PpoConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let mut actor = Mlp::new(&[STATE_DIM, h, h, 4], 0.01, rng);
        let critic = Mlp::new(&[STATE_DIM, h, h, 2], 1.0, rng);
        // log-std heads start at the configured value
        let n = actor.num_params();
        let b = inv_bounded_log_std(cfg.init_log_std);
        actor.params_mut()[n - 2] = b;
        actor.params_mut()[n - 1] = b;
        Self {
            actor_opt: Adam::new(actor.num_params(), cfg.lr),
            critic_opt: Adam::new(critic.num_params(), cfg.lr),
            actor,
            critic,
            cfg,
        }
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params()
    }

    /// Mean and log-std of the Gaussian over raw actions.
    pub fn dist(&self, s: &[f64]) -> ([f64; 2], [f64; 2]) {
        let o = self.actor.forward(s);
        ([o[0], o[1]], [bounded_log_std(o[2]), bounded_log_std(o[3])])
    }

    pub fn value(&self, s: &[f64]) -> [f64; 2] {
        let o = self.critic.forward(s);
        [o[0] * self.cfg.value_scale, o[1] * self.cfg.value_scale]
    }

    pub fn log_prob(&self, s: &[f64], raw: [f64; 2]) -> f64 {
        let (mu, ls) = self.dist(s);
        gaussian_log_prob(raw, mu, ls)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> ActionSample {
        let (mu, ls) = self.dist(s);
        let mut raw = [0.0; 2];
        for i in 0..2 {
            let z: f64 = StandardNormal.sample(rng);
            raw[i] = mu[i] + ls[i].exp() * z;
        }
        ActionSample {
            raw,
            log_prob: gaussian_log_prob(raw, mu, ls),
            value: self.value(s),
        }
    }

    /// Deterministic action (the mean).
    pub fn mean_action(&self, s: &[f64]) -> [f64; 2] {
        self.dist(s).0
    }
}

pub fn gaussian_log_prob(x: [f64; 2], mu: [f64; 2], log_std: [f64; 2]) -> f64 {
    (0..2)
        .map(|i| {
            let z = (x[i] - mu[i]) / log_std[i].exp();
            -0.5 * z * z - log_std[i] - 0.5 * LN_2PI
        })
        .sum()
}

fn gaussian_entropy(log_std: [f64; 2]) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (1.0 + LN_2PI)).sum()
}

/// Discounted vector returns and TD residuals of one episode.
///
/// `values` holds `V(s_0..s_{T-1})`; `bootstrap` is `V(s_T)` (zero at a true terminal).
pub fn vector_returns_and_deltas(
    rewards: &[[f64; 2]],
    values: &[[f64; 2]],
    bootstrap: [f64; 2],
    gamma: f64,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let n = rewards.len();
    let mut g = vec![[0.0; 2]; n];
    let mut d = vec![[0.0; 2]; n];
    let mut acc = bootstrap;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        for c in 0..2 {
            acc[c] = rewards[t][c] + gamma * acc[c];
            g[t][c] = acc[c];
            d[t][c] = rewards[t][c] + gamma * next[c] - values[t][c];
        }
    }
    (g, d)
}

/// Componentwise GAE over one episode's residuals.
pub fn dual_gae(deltas: &[[f64; 2]], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = deltas.len();
    let (mut a_phi, mut a_sigma) = (vec![0.0; n], vec![0.0; n]);
    let mut acc = [0.0; 2];
    for t in (0..n).rev() {
        for c in 0..2 {
            acc[c] = deltas[t][c] + gamma * lambda * acc[c];
        }
        a_phi[t] = acc[0];
        a_sigma[t] = acc[1];
    }
    (a_phi, a_sigma)
}

/// Violation depth `[eps - sigma]_+`.
pub fn violation(eps: f64, sigma: f64) -> f64 {
    (eps - sigma).max(0.0)
}

/// Shielding mask: current or next frame violates the threshold.
pub fn shield_mask(eps: f64, sigma_t: f64, sigma_next: f64) -> bool {
    violation(eps, sigma_t) > 0.0 || violation(eps, sigma_next) > 0.0
}

/// Routed advantage.
pub fn shield(a_phi: f64, a_sigma: f64, sigma_t: f64, sigma_next: f64, eps: f64) -> f64 {
    if shield_mask(eps, sigma_t, sigma_next) {
        a_sigma
    } else {
        a_phi
    }
}

/// One collected transition plus the episode-level context needed for advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: [f64; STATE_DIM],
    pub raw: [f64; 2],
    pub log_prob: f64,
    pub value: [f64; 2],
    /// `(phi, sigma)` reward observed after the action.
    pub reward: [f64; 2],
    pub sigma_t: f64,
    pub sigma_next: f64,
}

/// One episode's transitions, closed by a terminal or a truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub eps: f64,
    /// `V(s_T)` for truncated episodes, zero for terminal ones.
    pub bootstrap: [f64; 2],
    /// Skip shielding (risk-only ablation).
    pub unshielded: bool,
}

/// Flattened update batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShieldedBatch {
    pub states: Vec<[f64; STATE_DIM]>,
    pub raws: Vec<[f64; 2]>,
    pub old_log_probs: Vec<f64>,
    pub returns: Vec<[f64; 2]>,
    pub deltas: Vec<[f64; 2]>,
    pub a_phi: Vec<f64>,
    pub a_sigma: Vec<f64>,
    pub h_t: Vec<f64>,
    pub h_next: Vec<f64>,
    pub mask: Vec<bool>,
    pub advantages: Vec<f64>,
}

impl ShieldedBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn build(trajs: &[Trajectory], gamma: f64, lambda: f64, normalize: bool) -> Self {
        let mut b = Self::default();
        for tr in trajs {
            let rewards: Vec<[f64; 2]> = tr.steps.iter().map(|s| s.reward).collect();
            let values: Vec<[f64; 2]> = tr.steps.iter().map(|s| s.value).collect();
            let (g, d) = vector_returns_and_deltas(&rewards, &values, tr.bootstrap, gamma);
            let (ap, asg) = dual_gae(&d, gamma, lambda);
            for (t, s) in tr.steps.iter().enumerate() {
                let h_t = violation(tr.eps, s.sigma_t);
                let h_n = violation(tr.eps, s.sigma_next);
                let m = !tr.unshielded && (h_t > 0.0 || h_n > 0.0);
                b.states.push(s.state);
                b.raws.push(s.raw);
                b.old_log_probs.push(s.log_prob);
                b.returns.push(g[t]);
                b.deltas.push(d[t]);
                b.a_phi.push(ap[t]);
                b.a_sigma.push(asg[t]);
                b.h_t.push(h_t);
                b.h_next.push(h_n);
                b.mask.push(m);
                b.advantages.push(if m { asg[t] } else { ap[t] });
            }
        }
        if normalize {
            normalize_in_place(&mut b.advantages);
        }
        b
    }
}

pub fn normalize_in_place(x: &mut [f64]) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt().max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Clipped-surrogate contribution of one sample: `min(rho A, clip(rho) A)`.
pub fn clipped_objective(ratio: f64, adv: f64, eta: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eta, 1.0 + eta) * adv)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub skipped: usize,
}

impl ScenarioPolicy {
    /// Loss values and gradients for one minibatch, without touching the parameters.
    pub fn minibatch_grads(
        &self,
        batch: &ShieldedBatch,
        idx: &[usize],
    ) -> (UpdateStats, Vec<f64>, Vec<f64>) {
        let n = idx.len() as f64;
        let eta = self.cfg.clip_eta;
        let vs = self.cfg.value_scale;
        let mut ga = vec![0.0; self.actor.num_params()];
        let mut gc = vec![0.0; self.critic.num_params()];
        let mut st = UpdateStats::default();
        for &i in idx {
            let s = &batch.states[i];
            let tr = self.actor.trace(s);
            let o = tr.output();
            let mu = [o[0], o[1]];
            let ls = [bounded_log_std(o[2]), bounded_log_std(o[3])];
            let x = batch.raws[i];
            let lp = gaussian_log_prob(x, mu, ls);
            let ratio = (lp - batch.old_log_probs[i]).exp();
            let adv = batch.advantages[i];
            let surr = clipped_objective(ratio, adv, eta);
            let ent = gaussian_entropy(ls);
            st.policy_loss += -surr / n - self.cfg.c_ent * ent / n;
            st.entropy += ent / n;
            // d(-surr)/d(logp): nonzero only where the unclipped branch is the active minimum
            let clipped = ratio * adv > ratio.clamp(1.0 - eta, 1.0 + eta) * adv;
            if clipped {
                st.clip_fraction += 1.0 / n;
            }
            let dl_dlogp = if clipped { 0.0 } else { -ratio * adv / n };
            let mut d_out = [0.0; 4];
            for k in 0..2 {
                let sd = ls[k].exp();
                let z = (x[k] - mu[k]) / sd;
                // d logp / d mu = z / sd ; d logp / d logstd = z^2 - 1 ; d H / d logstd = 1
                d_out[k] = dl_dlogp * z / sd;
                let d_ls = dl_dlogp * (z * z - 1.0) - self.cfg.c_ent / n;
                d_out[k + 2] = d_ls * d_bounded_log_std(o[k + 2]);
            }
            self.actor.backward(&tr, &d_out, &mut ga);

            let tc = self.critic.trace(s);
            let v = tc.output();
            let mut dv = [0.0; 2];
            for k in 0..2 {
                let e = v[k] - batch.returns[i][k] / vs;
                st.value_loss += e * e / n;
                dv[k] = 2.0 * e / n;
            }
            self.critic.backward(&tc, &dv, &mut gc);
        }
        (st, ga, gc)
    }

    /// One pass over `batch` in shuffled minibatches.
    pub fn ppo_update<R: Rng + ?Sized>(
        &mut self,
        batch: &ShieldedBatch,
        rng: &mut R,
    ) -> UpdateStats {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut total = UpdateStats::default();
        let mut count = 0.0;
        for _ in 0..self.cfg.epochs.max(1) {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            for chunk in order.chunks(self.cfg.minibatch_size.max(1)) {
                let (st, mut ga, mut gc) = self.minibatch_grads(batch, chunk);
                let finite = [st.policy_loss, st.value_loss, st.entropy]
                    .iter()
                    .all(|v| v.is_finite())
                    && ga.iter().chain(&gc).all(|g| g.is_finite());
                if !finite {
                    log::warn!("ppo: non-finite loss or gradient, minibatch skipped");
                    total.skipped += 1;
                    continue;
                }
                clip_grad_norm(&mut ga, self.cfg.max_grad_norm);
                clip_grad_norm(&mut gc, self.cfg.max_grad_norm);
                self.actor_opt.step(self.actor.params_mut(), &ga);
                self.critic_opt.step(self.critic.params_mut(), &gc);
                total.policy_loss += st.policy_loss;
                total.value_loss += st.value_loss;
                total.entropy += st.entropy;
                total.clip_fraction += st.clip_fraction;
                count += 1.0;
            }
        }
        if count > 0.0 {
            total.policy_loss /= count;
            total.value_loss /= count;
            total.entropy /= count;
            total.clip_fraction /= count;
        }
        total
    }
}

/// Ego-frame relative velocity helper shared with feature code.
pub fn relative_velocity(obs: &Observation<'_>) -> [f64; 2] {
    let av = rotate_into(obs.ego.yaw, obs.adv.world_velocity());
    [av[0] - obs.ego.v_lon, av[1] - obs.ego.v_lat]
}
