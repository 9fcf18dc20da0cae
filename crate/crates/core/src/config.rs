//! Experiment configuration: a flat key-value document (TOML syntax) whose
//! keys mirror [`ExperimentConfig`]. A `preset` key selects the base values
//! that the remaining keys override.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, PpoConfig};
use crate::dreaming::{AugmentationMode, ContinueMode, DreamConfig};
use crate::envs::{known_env, ShapingConfig};
use crate::error::{Error, Result};
use crate::worldmodel::WorldModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    DreamRnd,
    DreamDeep,
    DreamVal,
    DreamMixture,
    DreamNone,
    /// PPO on stored real sequences instead of dreams.
    Offline,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::DreamRnd,
        RunMode::DreamDeep,
        RunMode::DreamVal,
        RunMode::DreamMixture,
        RunMode::DreamNone,
        RunMode::Offline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::DreamRnd => "dream_rnd",
            RunMode::DreamDeep => "dream_deep",
            RunMode::DreamVal => "dream_val",
            RunMode::DreamMixture => "dream_mixture",
            RunMode::DreamNone => "dream_none",
            RunMode::Offline => "offline",
        }
    }

    /// Augmentation used at night; `None` for offline runs.
    pub fn augmentation(self) -> Option<AugmentationMode> {
        match self {
            RunMode::DreamRnd => Some(AugmentationMode::RandomSwing),
            RunMode::DreamDeep => Some(AugmentationMode::DeepDream),
            RunMode::DreamVal => Some(AugmentationMode::ValueDiversify),
            RunMode::DreamMixture => Some(AugmentationMode::Mixture),
            RunMode::DreamNone => Some(AugmentationMode::None),
            RunMode::Offline => None,
        }
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown run mode {s:?}")))
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where night-phase rollouts start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NightStart {
    /// Random latent states.
    Random,
    /// Posterior states of stored real sequences.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub env: String,
    pub run_mode: RunMode,
    pub train_levels: u64,

    pub seed_episodes: usize,
    pub day_epochs: usize,
    pub world_updates: usize,
    pub day_steps: usize,
    pub world_batch: usize,
    pub seq_len: usize,
    pub night_epochs: usize,
    pub agent_updates: usize,
    pub agent_batch: usize,
    pub horizon: usize,
    pub test_repetitions: usize,
    pub parallel_envs: usize,

    pub lr_day: f64,
    pub lr_night: f64,
    pub grad_clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma_day: f64,
    /// Defaults to `1 - 1/horizon`.
    pub gamma_night: Option<f64>,
    pub lambda: f64,
    pub ppo_clip: f64,
    pub ppo_iterations: usize,
    pub adv_decay: f64,

    pub p_swing: f64,
    pub deep_dream_steps: usize,
    pub deep_dream_step_size: f64,
    pub value_steps: usize,
    pub value_step_size: f64,
    /// Defaults to `1/horizon`.
    pub dream_epsilon: Option<f64>,
    pub continue_mode: ContinueMode,
    pub night_start: NightStart,

    pub priority: f64,
    pub replay_capacity: Option<usize>,
    /// Defaults depend on the environment.
    pub failure_penalty: Option<f64>,
    pub reward_scale: Option<f64>,
    pub checkpoint_every: usize,

    pub hidden: usize,
    pub categoricals: usize,
    pub classes: usize,
    pub units: usize,
    pub mlp_layers: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    pub kernel: usize,
    pub bins: usize,
    pub bins_lo: f64,
    pub bins_hi: f64,
    pub unimix: f64,
    pub unimix_posterior: bool,
    pub unimix_prior: bool,
    pub free_nats: f64,
    pub beta_dyn: f64,
    pub beta_rep: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let wm = WorldModelConfig::default();
        Self {
            preset: "paper".into(),
            seed: 0,
            env: "builtin-sparse".into(),
            run_mode: RunMode::DreamRnd,
            train_levels: 200,
            seed_episodes: 5,
            day_epochs: 200,
            world_updates: 20,
            day_steps: 5000,
            world_batch: 100,
            seq_len: 25,
            night_epochs: 200,
            agent_updates: 26,
            agent_batch: 12,
            horizon: 16,
            test_repetitions: 5,
            parallel_envs: 5,
            lr_day: 5e-4,
            lr_night: 1e-4,
            grad_clip: 0.5,
            value_coef: 0.5,
            entropy_coef: 0.001,
            gamma_day: 0.99,
            gamma_night: None,
            lambda: 0.95,
            ppo_clip: 0.2,
            ppo_iterations: 4,
            adv_decay: 0.99,
            p_swing: 0.5,
            deep_dream_steps: 10,
            deep_dream_step_size: 0.1,
            value_steps: 10,
            value_step_size: 0.5,
            dream_epsilon: None,
            continue_mode: ContinueMode::Soft,
            night_start: NightStart::Random,
            priority: 0.5,
            replay_capacity: None,
            failure_penalty: None,
            reward_scale: None,
            checkpoint_every: 10,
            hidden: wm.hidden,
            categoricals: wm.categoricals,
            classes: wm.classes,
            units: wm.units,
            mlp_layers: wm.mlp_layers,
            encoder_filters: wm.encoder_filters,
            decoder_filters: wm.decoder_filters,
            kernel: wm.kernel,
            bins: wm.bins,
            bins_lo: wm.bins_lo,
            bins_hi: wm.bins_hi,
            unimix: wm.unimix,
            unimix_posterior: wm.unimix_posterior,
            unimix_prior: wm.unimix_prior,
            free_nats: wm.free_nats,
            beta_dyn: wm.beta_dyn,
            beta_rep: wm.beta_rep,
        }
    }
}

impl ExperimentConfig {
    /// Small networks and budgets that train on a single CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            train_levels: 20,
            day_epochs: 20,
            day_steps: 500,
            night_epochs: 20,
            world_batch: 8,
            seq_len: 16,
            hidden: 64,
            categoricals: 8,
            classes: 8,
            units: 64,
            encoder_filters: vec![4, 8, 16, 32],
            decoder_filters: vec![16, 8, 4, 3],
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }

    /// Builds a config from a key-value table: the `preset` key (default
    /// `paper`) picks the base, every other key overrides it.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let preset = match table.get("preset") {
            None => "paper".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let base = Self::preset(&preset)?;
        let mut merged = base.to_table()?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `key=value` overrides. Values are read as TOML literals and fall
    /// back to plain strings, so `env=builtin-dense` needs no quotes.
    pub fn overrides_table(pairs: &[String]) -> Result<toml::Table> {
        let mut table = toml::Table::new();
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
            let k = k.trim();
            let v = v.trim();
            let value = format!("x = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("x"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        Ok(table)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, pairs: &[String]) -> Result<Self> {
        let mut table = self.to_table()?;
        for (k, v) in Self::overrides_table(pairs)? {
            table.insert(k, v);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    fn to_table(&self) -> Result<toml::Table> {
        match toml::Value::try_from(self) {
            Ok(toml::Value::Table(t)) => Ok(t),
            Ok(_) => Err(Error::Config("config did not serialize to a table".into())),
            Err(e) => Err(Error::Config(format!("cannot serialize config: {e}"))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn gamma_night(&self) -> f64 {
        self.gamma_night.unwrap_or(1.0 - 1.0 / self.horizon.max(1) as f64)
    }

    pub fn shaping(&self) -> ShapingConfig {
        let base = ShapingConfig::for_env(&self.env);
        ShapingConfig {
            failure_penalty: self.failure_penalty.unwrap_or(base.failure_penalty),
            reward_scale: self.reward_scale.unwrap_or(base.reward_scale),
        }
    }

    pub fn world_model(&self, actions: usize) -> WorldModelConfig {
        WorldModelConfig {
            hidden: self.hidden,
            categoricals: self.categoricals,
            classes: self.classes,
            units: self.units,
            mlp_layers: self.mlp_layers,
            encoder_filters: self.encoder_filters.clone(),
            decoder_filters: self.decoder_filters.clone(),
            kernel: self.kernel,
            actions,
            bins: self.bins,
            bins_lo: self.bins_lo,
            bins_hi: self.bins_hi,
            unimix: self.unimix,
            unimix_posterior: self.unimix_posterior,
            unimix_prior: self.unimix_prior,
            free_nats: self.free_nats,
            beta_dyn: self.beta_dyn,
            beta_rep: self.beta_rep,
            ..WorldModelConfig::default()
        }
    }

    pub fn agent(&self, actions: usize) -> AgentConfig {
        AgentConfig {
            features: self.hidden + self.categoricals * self.classes,
            actions,
            units: self.units,
            mlp_layers: self.mlp_layers,
            bins: self.bins,
            bins_lo: self.bins_lo,
            bins_hi: self.bins_hi,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.ppo_clip,
            iterations: self.ppo_iterations,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            minibatch: self.agent_batch * self.horizon,
        }
    }

    pub fn dream(&self, mode: AugmentationMode) -> DreamConfig {
        DreamConfig {
            horizon: self.horizon,
            mode,
            epsilon: self.dream_epsilon,
            p_swing: self.p_swing,
            deep_dream_steps: self.deep_dream_steps,
            deep_dream_step_size: self.deep_dream_step_size,
            value_steps: self.value_steps,
            value_step_size: self.value_step_size,
            continues: self.continue_mode,
        }
    }

    /// Night start states per epoch (`U_a * B_a`).
    pub fn night_starts(&self) -> usize {
        self.agent_updates * self.agent_batch
    }

    /// Real environment steps collected by day (excluding seed episodes).
    pub fn day_budget(&self) -> usize {
        self.day_epochs * self.day_steps
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !known_env(&self.env) {
            errs.push(format!("unknown environment {:?}", self.env));
        }
        let positive = [
            ("train_levels", self.train_levels as usize),
            ("seed_episodes", self.seed_episodes),
            ("world_updates", self.world_updates),
            ("day_steps", self.day_steps),
            ("world_batch", self.world_batch),
            ("agent_updates", self.agent_updates),
            ("agent_batch", self.agent_batch),
            ("horizon", self.horizon),
            ("test_repetitions", self.test_repetitions),
            ("parallel_envs", self.parallel_envs),
            ("ppo_iterations", self.ppo_iterations),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if self.seq_len < 2 {
            errs.push("seq_len must be at least 2".into());
        }
        if self.parallel_envs > self.day_steps.max(1) {
            errs.push("parallel_envs cannot exceed day_steps".into());
        }
        for (name, v) in [("lr_day", self.lr_day), ("lr_night", self.lr_night), ("grad_clip", self.grad_clip)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive and finite"));
            }
        }
        for (name, v) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be non-negative"));
            }
        }
        for (name, v) in [
            ("gamma_day", self.gamma_day),
            ("gamma_night", self.gamma_night()),
            ("lambda", self.lambda),
            ("priority", self.priority),
            ("p_swing", self.p_swing),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            errs.push("ppo_clip must lie in (0, 1)".into());
        }
        if !(self.adv_decay > 0.0 && self.adv_decay < 1.0) {
            errs.push("adv_decay must lie in (0, 1)".into());
        }
        if let Some(cap) = self.replay_capacity {
            if cap == 0 {
                errs.push("replay_capacity must be positive when set".into());
            }
        }
        errs.extend(self.shaping().validate());
        errs.extend(self.dream(AugmentationMode::None).validate());
        errs.extend(self.world_model(2).validate());
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(ExperimentConfig::default().validate().is_empty());
        assert!(ExperimentConfig::desk().validate().is_empty());
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.night_starts(), 312);
        assert_eq!(cfg.day_budget(), 1_000_000);
        assert!((cfg.gamma_night() - 0.9375).abs() < 1e-12);
        assert_eq!(cfg.ppo().minibatch, 192);
    }

    #[test]
    fn file_overrides_preset() {
        let cfg = ExperimentConfig::parse("preset = \"desk\"\nseed = 7\nrun_mode = \"offline\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.run_mode, RunMode::Offline);
        assert_eq!(cfg.hidden, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("sede = 3").unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn cli_overrides() {
        let cfg = ExperimentConfig::desk()
            .with_overrides(&["env=builtin-dense".into(), "lr_day=1e-3".into(), "gamma_night=0.9".into()])
            .unwrap();
        assert_eq!(cfg.env, "builtin-dense");
        assert_eq!(cfg.lr_day, 1e-3);
        assert_eq!(cfg.gamma_night(), 0.9);
        assert_eq!(cfg.hidden, 64);
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = ExperimentConfig {
            horizon: 0,
            lambda: 1.5,
            env: "nope".into(),
            ..ExperimentConfig::desk()
        };
        let errs = cfg.validate();
        assert!(errs.len() >= 3, "{errs:?}");
        assert!(matches!(cfg.check(), Err(Error::ConfigList(_))));
    }

    #[test]
    fn run_modes_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>().unwrap(), m);
        }
        assert!(RunMode::Offline.augmentation().is_none());
    }
}
