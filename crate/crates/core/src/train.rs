//! Training loop: rollouts, online risk-critic updates, shielded PPO and the
//! cyclic threshold sweep with per-level checkpoints.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(seed, purpose)`,
//! so results do not depend on the number of rollout workers.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Variant};
use crate::error::{Error, Result};
use crate::feasibility::{sigma, FeasibilityParams, FeasibilityReport, Mode};
use crate::geometry::{KinematicState, RelativeFrame};
use crate::io::{Checkpoint, LogWriter};
use crate::microsim::{
    run_episode, AdversaryDriver, EpisodeCtx, EpisodeLog, EpisodeSummary, Frame, Observation,
    Outcome, Route, UniformRandom, WorldConfig,
};
use crate::nn::{Adam, Mlp};
use crate::policy::{
    policy_state, squash, ScenarioPolicy, Step, Trajectory, UpdateStats, STATE_DIM,
};
use crate::risk::{potential, ReplayBuffer, RiskCritic, RiskFeatures, Transition};

const STREAM_INIT: u64 = u64::MAX;
const STREAM_UPDATE: u64 = 1 << 63;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Policy input for a stored frame.
pub fn frame_state(
    ego: &KinematicState,
    adv: &KinematicState,
    step: usize,
    route: &Route,
    world: &WorldConfig,
    fparams: &FeasibilityParams,
    eps: f64,
) -> [f64; STATE_DIM] {
    let report = sigma(ego, adv, fparams, Mode::PhysicsLimit);
    let obs = Observation {
        step,
        ego,
        adv,
        route,
        report: &report,
        eps,
        bounds: &world.adv_bounds,
    };
    policy_state(&obs, fparams.far_cap)
}

struct PolicyDriver<'a> {
    policy: &'a ScenarioPolicy,
    rng: ChaCha8Rng,
    far_cap: f64,
    record: Vec<([f64; STATE_DIM], [f64; 2], f64, [f64; 2])>,
}

impl AdversaryDriver for PolicyDriver<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> [f64; 2] {
        let s = policy_state(obs, self.far_cap);
        let a = self.policy.sample(&s, &mut self.rng);
        self.record.push((s, a.raw, a.log_prob, a.value));
        squash(a.raw, obs.bounds)
    }
}

/// One collected episode with the actor's records.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub log: EpisodeLog,
    pub record: Vec<([f64; STATE_DIM], [f64; 2], f64, [f64; 2])>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u64,
    pub episode_start: u64,
    pub episode_end: u64,
    pub level: usize,
    pub eps: f64,
    pub steps: usize,
    pub collision_rate: f64,
    pub invalid_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub risk_loss: f64,
    pub skipped: usize,
}

impl IterationStats {
    pub const CSV_HEADER: &'static str = "iteration,episode_start,episode_end,level,eps,steps,collision_rate,invalid_rate,policy_loss,value_loss,entropy,clip_fraction,risk_loss,skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.episode_start,
            self.episode_end,
            self.level,
            self.eps,
            self.steps,
            self.collision_rate,
            self.invalid_rate,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            self.risk_loss,
            self.skipped
        )
    }
}

/// Complete learner state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: Config,
    pub world: WorldConfig,
    route: Route,
    /// Policy of the level being trained.
    pub policy: ScenarioPolicy,
    /// Policies of the other levels, parked until their next visit.
    pub parked: Vec<Option<ScenarioPolicy>>,
    pub critic: RiskCritic,
    pub replay: ReplayBuffer,
    /// Index of the next episode to collect.
    pub episode: u64,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.world()?;
        let route = Route::new(world.route.clone())?;
        let mut rng = stream_rng(cfg.run.seed, STREAM_INIT);
        let policy = ScenarioPolicy::new(cfg.ppo.clone(), &mut rng);
        let critic = RiskCritic::new(cfg.risk.clone(), &mut rng);
        let replay = ReplayBuffer::new(cfg.risk.buffer_capacity);
        let parked = vec![None; cfg.schedule.n_levels];
        Ok(Self {
            cfg,
            world,
            route,
            policy,
            critic,
            replay,
            parked,
            episode: 0,
            iteration: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.cfg.run.episodes
    }

    /// Runs one episode against the current snapshot. Pure in `&self`.
    pub fn rollout(&self, episode: u64) -> Result<Rollout> {
        let (eps, level) = self.cfg.schedule.active(episode);
        self.rollout_at(episode, eps, level)
    }

    /// Runs one episode at a given threshold, outside the schedule.
    pub fn rollout_at(&self, episode: u64, eps: f64, level: usize) -> Result<Rollout> {
        self.rollout_with(&self.policy, episode, eps, level)
    }

    fn rollout_with(
        &self,
        policy: &ScenarioPolicy,
        episode: u64,
        eps: f64,
        level: usize,
    ) -> Result<Rollout> {
        let seed = self.cfg.run.seed;
        let ctx = EpisodeCtx {
            episode,
            seed,
            level,
            eps,
        };
        let mut spawn_rng = stream_rng(seed, 2 * episode);
        let act_rng = stream_rng(seed, 2 * episode + 1);
        let fp = &self.cfg.feasibility;
        if self.cfg.run.variant == Variant::RandomAdversary {
            let mut d = UniformRandom { rng: act_rng };
            let log = run_episode(
                &self.world,
                &mut d,
                Some(&self.critic),
                fp,
                ctx,
                &mut spawn_rng,
            )?;
            return Ok(Rollout {
                log,
                record: Vec::new(),
            });
        }
        let mut d = PolicyDriver {
            policy,
            rng: act_rng,
            far_cap: fp.far_cap,
            record: Vec::new(),
        };
        let log = run_episode(
            &self.world,
            &mut d,
            Some(&self.critic),
            fp,
            ctx,
            &mut spawn_rng,
        )?;
        Ok(Rollout {
            log,
            record: d.record,
        })
    }

    /// Collects episodes in order, in waves of `workers`, until the batch is full,
    /// the active level changes, or the run ends. Surplus episodes are discarded.
    fn collect(&self) -> Result<Vec<Rollout>> {
        let sched = &self.cfg.schedule;
        let level = sched.level_index(self.episode);
        let limit = self.cfg.run.episodes;
        let workers = self.cfg.run.workers.max(1) as u64;
        let mut out = Vec::new();
        let mut steps = 0;
        let mut next = self.episode;
        loop {
            let wave: Vec<u64> = (next..(next + workers).min(limit))
                .take_while(|&e| sched.level_index(e) == level)
                .collect();
            if wave.is_empty() {
                return Ok(out);
            }
            next += wave.len() as u64;
            let results: Vec<Result<Rollout>> = if wave.len() == 1 {
                vec![self.rollout(wave[0])]
            } else {
                std::thread::scope(|s| {
                    let hs: Vec<_> = wave
                        .iter()
                        .map(|&e| s.spawn(move || self.rollout(e)))
                        .collect();
                    hs.into_iter()
                        .map(|h| h.join().expect("rollout worker panicked"))
                        .collect()
                })
            };
            for r in results {
                let r = r?;
                steps += r.log.frames.len().saturating_sub(1);
                out.push(r);
                if steps >= self.cfg.ppo.batch_size {
                    return Ok(out);
                }
            }
        }
    }

    fn report_of(&self, f: &Frame) -> FeasibilityReport {
        sigma(&f.ego, &f.adv, &self.cfg.feasibility, Mode::PhysicsLimit)
    }

    /// Policy trajectory with the configured reward components.
    pub fn trajectory(&self, r: &Rollout) -> Trajectory {
        let frames = &r.log.frames;
        let n = r.record.len().min(frames.len().saturating_sub(1));
        let clip = self.cfg.training.sigma_reward_clip;
        let variant = self.cfg.run.variant;
        let steps = (0..n)
            .map(|t| {
                let (state, raw, log_prob, value) = r.record[t];
                let next = &frames[t + 1];
                let risk = match variant {
                    Variant::SigmaOnly => 1.0 / (1.0 + self.report_of(next).t.max(0.0)),
                    _ => next.phi,
                };
                Step {
                    state,
                    raw,
                    log_prob,
                    value,
                    reward: [risk, next.sigma.clamp(-clip, clip)],
                    sigma_t: frames[t].sigma,
                    sigma_next: next.sigma,
                }
            })
            .collect();
        let bootstrap = if r.log.summary.outcome == Outcome::Timeout && n == frames.len() - 1 {
            let f = frames.last().expect("non-empty");
            let s = frame_state(
                &f.ego,
                &f.adv,
                f.step,
                &self.route,
                &self.world,
                &self.cfg.feasibility,
                f.eps,
            );
            self.policy.value(&s)
        } else {
            [0.0, 0.0]
        };
        Trajectory {
            steps,
            eps: r.log.summary.eps,
            bootstrap,
            unshielded: variant == Variant::PhiOnly,
        }
    }

    /// Risk-critic transitions of one episode.
    pub fn transitions(&self, log: &EpisodeLog) -> Vec<Transition> {
        let fp = &self.cfg.feasibility;
        let kappa = self.cfg.risk.kappa;
        let feat = |f: &Frame| {
            let rel = RelativeFrame::new(&f.ego, &f.adv);
            (
                RiskFeatures::from_relative(&rel, fp.far_cap).to_input(),
                potential(rel.center_distance(), kappa),
            )
        };
        let terminal = matches!(
            log.summary.outcome,
            Outcome::Collision | Outcome::RouteComplete
        );
        let n = log.frames.len();
        (0..n.saturating_sub(1))
            .map(|t| {
                let (input, f_s) = feat(&log.frames[t]);
                let (next_input, f_next) = feat(&log.frames[t + 1]);
                let done = terminal && t + 2 == n;
                Transition {
                    input,
                    next_input,
                    f_s,
                    f_next: if done { 0.0 } else { f_next },
                    collision: log.frames[t + 1].collision,
                    done,
                }
            })
            .collect()
    }

    /// One iteration: collect, update the policy, update the risk critic.
    pub fn iterate(
        &mut self,
        on_episode: &mut dyn FnMut(&EpisodeLog) -> Result<()>,
    ) -> Result<IterationStats> {
        self.enter_level();
        let rollouts = self.collect()?;
        let start = self.episode;
        let (eps, level) = self.cfg.schedule.active(start);
        let mut st = IterationStats {
            iteration: self.iteration,
            episode_start: start,
            level,
            eps,
            ..Default::default()
        };
        let mut trajs = Vec::with_capacity(rollouts.len());
        let (mut collided, mut neg, mut counted) = (0, 0, 0);
        let tail = crate::metrics::tail_frames(crate::metrics::DEFAULT_TAIL_S, self.world.dt);
        for r in &rollouts {
            on_episode(&r.log)?;
            st.steps += r.log.frames.len().saturating_sub(1);
            collided += r.log.summary.collided as usize;
            let (a, b) = crate::metrics::invalid_counts(&r.log, tail);
            neg += a;
            counted += b;
            for t in self.transitions(&r.log) {
                self.replay.push(t);
            }
            if self.cfg.run.variant != Variant::RandomAdversary {
                trajs.push(self.trajectory(r));
            }
        }
        st.episode_end = start + rollouts.len() as u64;
        st.collision_rate = collided as f64 / rollouts.len().max(1) as f64;
        st.invalid_rate = if counted > 0 {
            neg as f64 / counted as f64
        } else {
            0.0
        };

        let mut rng = stream_rng(self.cfg.run.seed, STREAM_UPDATE | self.iteration);
        if !trajs.is_empty() {
            let p = &self.cfg.ppo;
            let batch = crate::policy::ShieldedBatch::build(
                &trajs,
                p.gamma,
                p.lambda,
                p.normalize_advantages,
            );
            let u: UpdateStats = self.policy.ppo_update(&batch, &mut rng);
            st.policy_loss = u.policy_loss;
            st.value_loss = u.value_loss;
            st.entropy = u.entropy;
            st.clip_fraction = u.clip_fraction;
            st.skipped = u.skipped;
        }
        let updates = (st.steps as f64 * self.cfg.training.risk_updates_per_step).round() as usize;
        let mut loss_sum = 0.0;
        let mut ok = 0;
        for _ in 0..updates {
            if self.replay.is_empty() {
                break;
            }
            let batch = self
                .replay
                .sample(&self.critic, self.cfg.risk.batch_size, &mut rng);
            match self.critic.train_step(&batch) {
                Ok(s) => {
                    loss_sum += s.loss;
                    ok += 1;
                }
                Err(e) => {
                    log::warn!("risk critic step skipped: {e}");
                    st.skipped += 1;
                }
            }
        }
        st.risk_loss = if ok > 0 { loss_sum / ok as f64 } else { 0.0 };
        self.episode = st.episode_end;
        self.iteration += 1;
        Ok(st)
    }

    /// At the start of a level visit, parks the previous level's policy and
    /// resumes this level's own. A first visit starts from the previous policy.
    fn enter_level(&mut self) {
        let s = &self.cfg.schedule;
        if self.episode == 0 || self.finished() {
            return;
        }
        let (prev, next) = (s.level_index(self.episode - 1), s.level_index(self.episode));
        if prev == next {
            return;
        }
        let resumed = self.parked[next].take();
        self.parked[prev] = Some(match resumed {
            Some(p) => std::mem::replace(&mut self.policy, p),
            None => self.policy.clone(),
        });
    }

    /// Latest policy of a level (zero-based); the active one if never parked.
    pub fn level_policy(&self, level: usize) -> &ScenarioPolicy {
        self.parked
            .get(level)
            .and_then(|p| p.as_ref())
            .unwrap_or(&self.policy)
    }

    /// True when the last iteration closed a level visit.
    pub fn level_closed(&self) -> bool {
        let s = &self.cfg.schedule;
        self.episode > 0
            && (self.finished() || s.level_index(self.episode) != s.level_index(self.episode - 1))
    }

    /// Level (one-based) of the most recently collected episode.
    pub fn last_level(&self) -> usize {
        self.cfg
            .schedule
            .level_index(self.episode.saturating_sub(1))
            + 1
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (replay, head, capacity) = self.replay.to_flat();
        let meta = serde_json::json!({
            "episode": self.episode,
            "iteration": self.iteration,
            "level": self.last_level(),
            "eps": self.cfg.schedule.active(self.episode.saturating_sub(1)).0,
            "seed": self.cfg.run.seed,
            "actor_sizes": self.policy.actor.sizes(),
            "critic_sizes": self.policy.critic.sizes(),
            "risk_sizes": self.critic.online.sizes(),
            "actor_adam_t": self.policy.actor_opt.t,
            "critic_adam_t": self.policy.critic_opt.t,
            "risk_adam_t": self.critic.opt.t,
            "replay_head": head,
            "replay_capacity": capacity,
        });
        let arr = |n: &str, v: &[f64]| (n.to_string(), v.to_vec());
        let mut arrays = policy_arrays("", &self.policy);
        let mut parked = Vec::new();
        for (i, p) in self.parked.iter().enumerate() {
            if let Some(p) = p {
                arrays.extend(policy_arrays(&format!("level{i}_"), p));
                parked.push(serde_json::json!([i, p.actor_opt.t, p.critic_opt.t]));
            }
        }
        let mut meta = meta;
        meta["parked"] = serde_json::Value::Array(parked);
        Checkpoint {
            config_hash: self.cfg.hash(),
            meta,
            arrays: arrays
                .into_iter()
                .chain([
                    arr("risk_online", self.critic.online.params()),
                    arr("risk_target", self.critic.target.params()),
                    arr("risk_m", &self.critic.opt.m),
                    arr("risk_v", &self.critic.opt.v),
                    ("replay".into(), replay),
                ])
                .collect(),
        }
    }

    /// Rebuilds a trainer from a checkpoint written under the same configuration.
    pub fn from_checkpoint(cfg: Config, ck: &Checkpoint) -> Result<Self> {
        if ck.config_hash != cfg.hash() {
            return Err(Error::Config(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        let mut t = Self::new(cfg)?;
        let bad = |m: &str| Error::format("checkpoint", m.to_string());
        let meta_u = |k: &str| {
            ck.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| bad(&format!("missing '{k}'")))
        };
        let sizes = |k: &str| -> Result<Vec<usize>> {
            serde_json::from_value(ck.meta.get(k).cloned().unwrap_or_default())
                .map_err(|_| bad(&format!("missing '{k}'")))
        };
        let net = |k: &str, sk: &str| -> Result<Mlp> {
            Mlp::from_params(&sizes(sk)?, ck.array(k)?.to_vec())
                .ok_or_else(|| bad(&format!("shape mismatch for '{k}'")))
        };
        let adam = |old: &Adam, m: &str, v: &str, t: u64| -> Result<Adam> {
            let (m, v) = (ck.array(m)?.to_vec(), ck.array(v)?.to_vec());
            if m.len() != old.m.len() || v.len() != old.v.len() {
                return Err(bad("optimizer shape mismatch"));
            }
            Ok(Adam {
                m,
                v,
                t,
                ..old.clone()
            })
        };
        let load_policy = |pre: &str, actor_t: u64, critic_t: u64| -> Result<ScenarioPolicy> {
            let mut p = t.policy.clone();
            p.actor = net(&format!("{pre}actor"), "actor_sizes")?;
            p.critic = net(&format!("{pre}critic"), "critic_sizes")?;
            p.actor_opt = adam(
                &p.actor_opt,
                &format!("{pre}actor_m"),
                &format!("{pre}actor_v"),
                actor_t,
            )?;
            p.critic_opt = adam(
                &p.critic_opt,
                &format!("{pre}critic_m"),
                &format!("{pre}critic_v"),
                critic_t,
            )?;
            if p.actor.num_params() != p.actor_opt.m.len()
                || p.critic.num_params() != p.critic_opt.m.len()
            {
                return Err(bad("network shape differs from configuration"));
            }
            Ok(p)
        };
        let policy = load_policy("", meta_u("actor_adam_t")?, meta_u("critic_adam_t")?)?;
        let parked: Vec<(usize, u64, u64)> =
            serde_json::from_value(ck.meta.get("parked").cloned().unwrap_or_default())
                .map_err(|_| bad("missing 'parked'"))?;
        for (i, at, ct) in parked {
            let p = load_policy(&format!("level{i}_"), at, ct)?;
            *t.parked
                .get_mut(i)
                .ok_or_else(|| bad("parked level out of range"))? = Some(p);
        }
        t.policy = policy;
        t.critic.online = net("risk_online", "risk_sizes")?;
        t.critic.target = net("risk_target", "risk_sizes")?;
        t.critic.opt = adam(&t.critic.opt, "risk_m", "risk_v", meta_u("risk_adam_t")?)?;
        if t.critic.online.num_params() != t.critic.opt.m.len() {
            return Err(bad("network shape differs from configuration"));
        }
        t.replay = ReplayBuffer::from_flat(
            ck.array("replay")?,
            meta_u("replay_head")? as usize,
            meta_u("replay_capacity")? as usize,
        )
        .ok_or_else(|| bad("malformed replay buffer"))?;
        t.episode = meta_u("episode")?;
        t.iteration = meta_u("iteration")?;
        Ok(t)
    }

    /// Trains to the configured episode count.
    pub fn run(
        &mut self,
        on_episode: &mut dyn FnMut(&EpisodeLog) -> Result<()>,
        on_iteration: &mut dyn FnMut(&IterationStats, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while !self.finished() {
            let st = self.iterate(on_episode)?;
            log::info!(
                "iter {} episodes {}..{} level {} cr {:.3} invalid {:.3}",
                st.iteration,
                st.episode_start,
                st.episode_end,
                st.level,
                st.collision_rate,
                st.invalid_rate
            );
            on_iteration(&st, self)?;
        }
        Ok(())
    }
}

fn policy_arrays(pre: &str, p: &ScenarioPolicy) -> Vec<(String, Vec<f64>)> {
    [
        ("actor", p.actor.params()),
        ("actor_m", &p.actor_opt.m[..]),
        ("actor_v", &p.actor_opt.v[..]),
        ("critic", p.critic.params()),
        ("critic_m", &p.critic_opt.m[..]),
        ("critic_v", &p.critic_opt.v[..]),
    ]
    .into_iter()
    .map(|(n, v)| (format!("{pre}{n}"), v.to_vec()))
    .collect()
}

/// Episode ids used by evaluation rollouts; far above any training index.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;

impl Trainer {
    /// Collision rate of each level's latest policy at its own threshold, using
    /// the same `episodes` spawn and action streams at each level.
    pub fn evaluate_levels(&self, episodes: u64) -> Result<Vec<f64>> {
        self.cfg
            .schedule
            .levels()
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let mut hits = 0;
                for j in 0..episodes {
                    hits += self
                        .rollout_with(self.level_policy(i), EVAL_EPISODE_BASE + j, eps, i + 1)?
                        .log
                        .summary
                        .collided as u64;
                }
                Ok(hits as f64 / episodes.max(1) as f64)
            })
            .collect()
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn level_checkpoint(&self, level: usize) -> PathBuf {
        self.checkpoints().join(format!("level_{level}.ckpt"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub template: String,
    pub episodes: u64,
    pub iterations: u64,
    pub finished: bool,
    pub package_version: String,
    pub format_versions: serde_json::Value,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keeps only the lines a predicate accepts (used to rewind logs on resume).
fn filter_lines(path: &Path, keep: impl Fn(usize, &str) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::with_capacity(text.len());
    for (i, l) in text.lines().enumerate() {
        if keep(i, l) {
            out.push_str(l);
            out.push('\n');
        }
    }
    write_text(path, &out)
}

fn episode_of_line(line: &str) -> Option<u64> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("summary")?.get("episode")?.as_u64()
}

/// Trains into a run directory, optionally resuming from a checkpoint file.
pub fn train_dir(cfg: Config, dir: &RunDir, resume: Option<&Path>) -> Result<Trainer> {
    std::fs::create_dir_all(dir.checkpoints()).map_err(|e| Error::io(dir.checkpoints(), e))?;
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::from_checkpoint(cfg.clone(), &Checkpoint::load(p)?)?;
            let (ep, it) = (t.episode, t.iteration);
            filter_lines(&dir.episodes(), |i, l| {
                i == 0 || episode_of_line(l).is_some_and(|e| e < ep)
            })?;
            filter_lines(&dir.metrics(), |i, l| {
                i == 0
                    || l.split(',')
                        .next()
                        .and_then(|s| s.parse::<u64>().ok())
                        .is_some_and(|x| x < it)
            })?;
            t
        }
        None => {
            write_text(&dir.metrics(), &format!("{}\n", IterationStats::CSV_HEADER))?;
            if cfg.run.write_logs {
                LogWriter::create(dir.episodes())?;
            }
            Trainer::new(cfg.clone())?
        }
    };
    write_text(&dir.config(), &cfg.to_toml())?;
    let logs = std::cell::RefCell::new(if cfg.run.write_logs {
        Some(LogWriter::append(dir.episodes())?)
    } else {
        None
    });
    let mut metrics = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(dir.metrics())
        .map_err(|e| Error::io(dir.metrics(), e))?;
    let manifest = |t: &Trainer| Manifest {
        config_hash: t.cfg.hash_hex(),
        seed: t.cfg.run.seed,
        variant: t.cfg.run.variant,
        template: t.cfg.run.template.clone(),
        episodes: t.episode,
        iterations: t.iteration,
        finished: t.finished(),
        package_version: env!("CARGO_PKG_VERSION").into(),
        format_versions: serde_json::json!({
            "episodes": crate::io::LOG_VERSION,
            "checkpoint": crate::io::CKPT_VERSION,
        }),
    };
    let write_manifest = |t: &Trainer| {
        let text = serde_json::to_string_pretty(&manifest(t)).expect("manifest serializes");
        write_text(&dir.manifest(), &text)
    };
    write_manifest(&trainer)?;
    trainer.run(
        &mut |l| match logs.borrow_mut().as_mut() {
            Some(w) => w.write(l),
            None => Ok(()),
        },
        &mut |st, t| {
            use std::io::Write;
            writeln!(metrics, "{}", st.csv_row()).map_err(|e| Error::io(dir.metrics(), e))?;
            if t.level_closed() {
                if let Some(w) = logs.borrow_mut().as_mut() {
                    w.flush()?;
                }
                t.checkpoint().save(dir.level_checkpoint(t.last_level()))?;
                write_manifest(t)?;
            }
            Ok(())
        },
    )?;
    if let Some(w) = logs.borrow_mut().as_mut() {
        w.flush()?;
    }
    trainer.checkpoint().save(dir.final_checkpoint())?;
    write_manifest(&trainer)?;
    Ok(trainer)
}

/// Episode summaries and gap-frame pairs kept in memory by `train_in_memory`.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub summaries: Vec<EpisodeSummary>,
    pub iterations: Vec<IterationStats>,
    /// Per episode: surviving and negative pre-collision frame counts.
    pub invalid: Vec<(usize, usize)>,
    /// Per episode: `(phi, sigma)` of frames with `sigma > 0` (collided episodes only).
    pub gap_pairs: Vec<Vec<(f64, f64)>>,
}

impl RunRecord {
    pub fn collision_rate(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.summaries[range];
        s.iter().filter(|x| x.collided).count() as f64 / s.len().max(1) as f64
    }

    pub fn invalid_rate(&self, range: std::ops::Range<usize>) -> f64 {
        let (n, d) = self.invalid[range]
            .iter()
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if d == 0 {
            0.0
        } else {
            n as f64 / d as f64
        }
    }

    pub fn gcs(&self, range: std::ops::Range<usize>, k: usize) -> f64 {
        let pairs: Vec<(f64, f64)> = self.gap_pairs[range].iter().flatten().copied().collect();
        let occ = crate::metrics::occupancy(&pairs, k);
        occ.iter().filter(|&&b| b).count() as f64 / (k * k) as f64
    }
}

/// Trains without touching the filesystem, keeping compact per-episode records.
pub fn train_in_memory(cfg: Config) -> Result<(Trainer, RunRecord)> {
    let mut t = Trainer::new(cfg)?;
    let tail = crate::metrics::tail_frames(crate::metrics::DEFAULT_TAIL_S, t.world.dt);
    let mut rec = RunRecord::default();
    let mut iters = Vec::new();
    t.run(
        &mut |l| {
            rec.summaries.push(l.summary.clone());
            rec.invalid.push(crate::metrics::invalid_counts(l, tail));
            rec.gap_pairs.push(if l.summary.collided {
                l.frames
                    .iter()
                    .filter(|f| f.sigma > 0.0)
                    .map(|f| (f.phi, f.sigma))
                    .collect()
            } else {
                Vec::new()
            });
            Ok(())
        },
        &mut |st, _| {
            iters.push(st.clone());
            Ok(())
        },
    )?;
    rec.iterations = iters;
    Ok((t, rec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> Config {
        let mut c = Config::default();
        c.run.episodes = 24;
        c.run.variant = variant;
        c.ppo.batch_size = 256;
        c.schedule.switch_every = 5;
        c.risk.batch_size = 16;
        c
    }

    #[test]
    fn batches_never_straddle_levels() {
        let (_, rec) = train_in_memory(small(Variant::Full)).unwrap();
        assert_eq!(rec.summaries.len(), 24);
        for it in &rec.iterations {
            let s = &rec.summaries[it.episode_start as usize..it.episode_end as usize];
            assert!(s.iter().all(|x| x.level == it.level));
        }
        assert!(rec
            .summaries
            .iter()
            .enumerate()
            .all(|(i, s)| s.episode == i as u64));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (a, ra) = train_in_memory(small(Variant::Full)).unwrap();
        let mut c = small(Variant::Full);
        c.run.workers = 3;
        let (b, rb) = train_in_memory(c).unwrap();
        assert_eq!(
            ra.summaries.iter().map(|s| s.steps).collect::<Vec<_>>(),
            rb.summaries.iter().map(|s| s.steps).collect::<Vec<_>>()
        );
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.critic, b.critic);
    }

    #[test]
    fn revisited_level_resumes_its_own_policy() {
        let mut c = small(Variant::Full);
        c.run.episodes = 60;
        c.schedule.n_levels = 2;
        let mut t = Trainer::new(c).unwrap();
        let mut saved = None;
        while !t.finished() {
            t.iterate(&mut |_| Ok(())).unwrap();
            if t.episode == 5 {
                saved = Some(t.policy.clone());
            }
            if t.episode == 10 {
                // level 0 is parked exactly as it was left
                assert_eq!(t.parked[0].as_ref(), saved.as_ref());
                assert_ne!(&t.policy, saved.as_ref().unwrap());
            }
            if t.episode > 10 && t.episode <= 15 {
                assert!(t.parked[0].is_none() && t.parked[1].is_some());
            }
        }
        let ck = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let r = Trainer::from_checkpoint(t.cfg.clone(), &ck).unwrap();
        assert_eq!(r.parked, t.parked);
        assert_eq!(r.level_policy(0), t.level_policy(0));
    }

    #[test]
    fn checkpoint_restores_exact_state() {
        let mut t = Trainer::new(small(Variant::Full)).unwrap();
        t.iterate(&mut |_| Ok(())).unwrap();
        let ck = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let r = Trainer::from_checkpoint(t.cfg.clone(), &ck).unwrap();
        assert_eq!(r.policy, t.policy);
        assert_eq!(r.critic, t.critic);
        assert_eq!((r.episode, r.iteration), (t.episode, t.iteration));
        assert_eq!(r.replay.to_flat(), t.replay.to_flat());
        let mut other = t.cfg.clone();
        other.run.seed += 1;
        assert!(Trainer::from_checkpoint(other, &ck).is_err());
    }

    #[test]
    fn terminal_transition_drops_next_potential() {
        let t = Trainer::new(small(Variant::Full)).unwrap();
        let r = t.rollout(0).unwrap();
        let tr = t.transitions(&r.log);
        assert_eq!(tr.len(), r.log.frames.len() - 1);
        let last = tr.last().unwrap();
        let terminal = matches!(
            r.log.summary.outcome,
            Outcome::Collision | Outcome::RouteComplete
        );
        assert_eq!(last.done, terminal);
        if terminal {
            assert_eq!(last.f_next, 0.0);
        }
        assert!(tr[..tr.len() - 1].iter().all(|x| !x.done));
    }

    #[test]
    fn trajectory_rewards_follow_the_variant() {
        for v in [Variant::Full, Variant::PhiOnly, Variant::SigmaOnly] {
            let t = Trainer::new(small(v)).unwrap();
            let r = t.rollout(3).unwrap();
            let tr = t.trajectory(&r);
            assert_eq!(tr.steps.len(), r.log.frames.len() - 1);
            assert_eq!(tr.unshielded, v == Variant::PhiOnly);
            for (k, s) in tr.steps.iter().enumerate() {
                let f = &r.log.frames[k + 1];
                assert_eq!(s.reward[1], f.sigma.clamp(-1.0, 1.0));
                if v == Variant::SigmaOnly {
                    assert!(s.reward[0] > 0.0 && s.reward[0] <= 1.0);
                } else {
                    assert_eq!(s.reward[0], f.phi);
                }
            }
        }
    }

    #[test]
    fn random_variant_skips_policy_updates() {
        let (t, _) = train_in_memory(small(Variant::RandomAdversary)).unwrap();
        let fresh = Trainer::new(small(Variant::RandomAdversary)).unwrap();
        assert_eq!(t.policy, fresh.policy);
        assert_ne!(t.critic, fresh.critic);
    }
}
