//! Experiment configuration: one TOML tree, every field defaulted, unknown keys rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feasibility::FeasibilityParams;
use crate::microsim::{self, ControllerKind, WorldConfig};
use crate::policy::PpoConfig;
use crate::risk::RiskConfig;
use crate::schedule::EpsSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Risk advantage outside the shield, feasibility advantage inside.
    Full,
    /// Risk advantage everywhere; shielding disabled.
    PhiOnly,
    /// Shielded, with the risk component replaced by a TTC proxy `1 / (1 + ttc)`.
    SigmaOnly,
    /// Uniform-random adversary, no policy updates.
    RandomAdversary,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "phi_only" => Ok(Self::PhiOnly),
            "sigma_only" => Ok(Self::SigmaOnly),
            "random_adversary" => Ok(Self::RandomAdversary),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full, phi_only, sigma_only or random_adversary)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub template: String,
    pub ego_controller: ControllerKind,
    pub episodes: u64,
    pub variant: Variant,
    /// Rollout threads; results do not depend on it.
    pub workers: usize,
    /// Write every episode to `episodes.jsonl`.
    pub write_logs: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            template: "left_turn".into(),
            ego_controller: ControllerKind::IdmPursuit,
            episodes: 3000,
            variant: Variant::Full,
            workers: 1,
            write_logs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Risk-critic gradient steps per collected environment step.
    pub risk_updates_per_step: f64,
    /// Feasibility reward is clipped to `[-c, c]` before entering returns.
    pub sigma_reward_clip: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            risk_updates_per_step: 0.125,
            sigma_reward_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub training: TrainingConfig,
    pub feasibility: FeasibilityParams,
    pub risk: RiskConfig,
    pub ppo: PpoConfig,
    pub schedule: EpsSchedule,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::Config(e.message().to_string() + &span_hint(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    /// Canonical text with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// World for the configured template and ego.
    pub fn world(&self) -> Result<WorldConfig> {
        let mut w = microsim::template(&self.run.template)?;
        w.ego_controller = self.run.ego_controller;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("{name}: {msg}")));
        if let Err(m) = self.feasibility.validate() {
            return field("feasibility", m);
        }
        if let Err(m) = self.schedule.validate() {
            return field("schedule", m);
        }
        let w = self.world()?;
        w.check_against(&self.feasibility)?;
        if self.run.episodes == 0 {
            return field("run.episodes", "must be > 0".into());
        }
        if self.run.workers == 0 {
            return field("run.workers", "must be >= 1".into());
        }
        let p = &self.ppo;
        if p.hidden == 0 || p.batch_size == 0 || p.minibatch_size == 0 || p.epochs == 0 {
            return field(
                "ppo",
                "hidden, batch_size, minibatch_size and epochs must be > 0".into(),
            );
        }
        for (name, v, lo, hi) in [
            ("ppo.gamma", p.gamma, 0.0, 1.0),
            ("ppo.lambda", p.lambda, 0.0, 1.0),
            ("ppo.clip_eta", p.clip_eta, 0.0, 1.0),
            ("risk.gamma", self.risk.gamma, 0.0, 1.0),
            ("risk.tau", self.risk.tau, 0.0, 1.0),
        ] {
            if !(v >= lo && v <= hi) {
                return field(name, format!("must lie in [{lo}, {hi}] (got {v})"));
            }
        }
        for (name, v) in [
            ("ppo.lr", p.lr),
            ("ppo.max_grad_norm", p.max_grad_norm),
            ("ppo.value_scale", p.value_scale),
            ("risk.lr", self.risk.lr),
            (
                "training.sigma_reward_clip",
                self.training.sigma_reward_clip,
            ),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return field(name, format!("must be finite and > 0 (got {v})"));
            }
        }
        if !(self.training.risk_updates_per_step >= 0.0) {
            return field("training.risk_updates_per_step", "must be >= 0".into());
        }
        if self.risk.hidden == 0 || self.risk.batch_size == 0 || self.risk.buffer_capacity == 0 {
            return field(
                "risk",
                "hidden, batch_size and buffer_capacity must be > 0".into(),
            );
        }
        Ok(())
    }
}

fn span_hint(e: &toml::de::Error) -> String {
    e.span()
        .map(|s| format!(" (at byte {})", s.start))
        .unwrap_or_default()
}
