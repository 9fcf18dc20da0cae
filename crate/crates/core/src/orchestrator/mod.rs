//! The day/night training loop.
//!
//! By day the world model is trained on replayed sequences and the agent
//! collects new experience in parallel environments, acting on encoded
//! latents, followed by one on-policy PPO pass. By night the world model is
//! frozen and the agent keeps training on imagined trajectories (or, in the
//! offline baseline, on stored real sequences).

pub mod checkpoint;
pub mod export;
pub mod metrics;
pub mod plot;

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use rayon::prelude::*;

use crate::agent::{gae, normalize_advantages, ppo_update, AdvNormState, Agent, PpoBatch, PpoReport};
use crate::config::{ExperimentConfig, NightStart, RunMode};
use crate::dreaming::{imagine_from, sample_initial_state, DreamStreams};
use crate::envs::{make_env, sample_level, shape_reward, EnvSpec, Environment, Frame, LevelMode, FRAME_CHANNELS, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::replay::{self, Episode, EpisodeStore, ReplayDataset};
use crate::rng::{stream, stream_rng, StreamRng};
use crate::worldmodel::{images_to_tensor, one_hot_actions, LatentSampling, Latent, WorldModel, WorldModelLossReport};

use checkpoint::{Checkpoint, Progress, RunStreams};
use metrics::{EpochRecord, MetricsLog, Phase, TimingRecord, Timings};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPLAY_DIR: &str = "replay";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.safetensors";

const DTYPE: DType = DType::F32;

fn frames_tensor(frames: &[&Frame]) -> Result<Tensor> {
    let bytes: Vec<&[u8]> = frames.iter().map(|f| f.bytes()).collect();
    images_to_tensor(&bytes, FRAME_SIZE, FRAME_CHANNELS, DTYPE)
}

/// Chooses actions during evaluation episodes.
pub trait EvalPolicy {
    /// Called after each reset with the level seed and first observation.
    fn begin(&mut self, level: u64, first: &Frame) -> Result<()>;

    fn act(&mut self, obs: &Frame, rng: &mut StreamRng) -> Result<usize>;
}

/// The agent acting on posterior latents of its own observation history.
pub struct LatentPolicy<'a> {
    pub wm: &'a WorldModel,
    pub agent: &'a Agent,
    state: Option<(Latent, usize)>,
}

impl<'a> LatentPolicy<'a> {
    pub fn new(wm: &'a WorldModel, agent: &'a Agent) -> Self {
        Self { wm, agent, state: None }
    }
}

impl EvalPolicy for LatentPolicy<'_> {
    fn begin(&mut self, _level: u64, _first: &Frame) -> Result<()> {
        self.state = None;
        Ok(())
    }

    fn act(&mut self, obs: &Frame, rng: &mut StreamRng) -> Result<usize> {
        let h = match &self.state {
            None => self.wm.zeros_hidden(1)?,
            Some((prev, a)) => {
                let action = one_hot_actions(&[*a], self.wm.config().actions, DTYPE)?;
                self.wm.recurrent_step(prev, &action)?.detach()
            }
        };
        let (_, z) = self.wm.encode(&h, &frames_tensor(&[obs])?, rng)?;
        let s = Latent { h, z: z.detach() };
        let a = self.agent.policy_forward(&s.features()?, rng)?.sampled_actions[0];
        self.state = Some((s, a));
        Ok(a)
    }
}

/// Undiscounted raw returns of `repetitions` episodes on levels drawn for `mode`.
pub fn evaluate(
    env: &mut dyn Environment,
    policy: &mut dyn EvalPolicy,
    mode: LevelMode,
    repetitions: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if repetitions < 1 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let spec = env.spec().clone();
    let mut returns = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let level = sample_level(&spec, mode, rng);
        let mut obs = env.reset(level)?;
        policy.begin(level, &obs)?;
        let mut total = 0.0;
        loop {
            let a = policy.act(&obs, rng)?;
            let out = env.step(a)?;
            total += out.reward;
            if !out.cont {
                break;
            }
            obs = out.observation;
        }
        returns.push(total);
    }
    Ok(returns)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Call counters used to check phase separation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Probe {
    pub world_updates: usize,
    pub env_steps: usize,
    pub dream_rollouts: usize,
}

/// Experience gathered during one day epoch.
struct Collected {
    features: Tensor,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    episodes: Vec<Episode>,
}

fn fresh_episode(first: Frame) -> Episode {
    Episode {
        observations: vec![first],
        actions: Vec::new(),
        rewards: Vec::new(),
        continues: Vec::new(),
        log_probs: Vec::new(),
        success: false,
    }
}

fn sum_reports(acc: &mut WorldModelLossReport, r: &WorldModelLossReport) {
    acc.pred_image += r.pred_image;
    acc.pred_reward += r.pred_reward;
    acc.pred_continue += r.pred_continue;
    acc.dyn_kl += r.dyn_kl;
    acc.rep_kl += r.rep_kl;
    acc.total += r.total;
}

fn scale_report(r: &mut WorldModelLossReport, k: f64) {
    r.pred_image *= k;
    r.pred_reward *= k;
    r.pred_continue *= k;
    r.dyn_kl *= k;
    r.rep_kl *= k;
    r.total *= k;
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

pub struct Trainer {
    cfg: ExperimentConfig,
    out: PathBuf,
    spec: EnvSpec,
    wm: WorldModel,
    agent: Agent,
    world_opt: Adam,
    agent_opt: Adam,
    replay: ReplayDataset,
    store: EpisodeStore,
    metrics: MetricsLog,
    timings: Timings,
    progress: Progress,
    probe: Probe,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("out", &self.out)
            .field("progress", &self.progress)
            .finish_non_exhaustive()
    }
}

fn build_models(cfg: &ExperimentConfig, actions: usize) -> Result<(WorldModel, Agent, Adam, Adam)> {
    let mut init = stream_rng(cfg.seed, stream::INIT, 0);
    let wm = WorldModel::new(cfg.world_model(actions), DTYPE, &mut init)?;
    let agent = Agent::new(cfg.agent(actions), DTYPE, &mut init)?;
    let world_opt = Adam::new(AdamConfig::new(cfg.lr_day, cfg.grad_clip), wm.params())?;
    let agent_opt = Adam::new(AdamConfig::new(cfg.lr_day, cfg.grad_clip), agent.params())?;
    Ok((wm, agent, world_opt, agent_opt))
}

/// Rebuilds the configuration, world model and agent stored in a checkpoint.
pub fn load_models(path: &Path) -> Result<(ExperimentConfig, WorldModel, Agent)> {
    let ckpt = checkpoint::load(path)?;
    let cfg = ckpt.config;
    let env = make_env(&cfg.env, cfg.train_levels, LevelMode::Test)?;
    let (wm, agent, _, _) = build_models(&cfg, env.spec().action_count)?;
    wm.params().load(&checkpoint::section(&ckpt.tensors, "world"))?;
    agent.params().load(&checkpoint::section(&ckpt.tensors, "agent"))?;
    Ok((cfg, wm, agent))
}

impl Trainer {
    /// Starts a fresh run in `out`: validates the config, builds the models
    /// and seeds the replay dataset with random-action episodes.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.check()?;
        let out = out.into();
        std::fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&out, e))?;
        std::fs::write(out.join(CONFIG_FILE), cfg.to_toml()).map_err(|e| Error::io(&out, e))?;
        let replay_dir = out.join(REPLAY_DIR);
        if replay_dir.exists() {
            std::fs::remove_dir_all(&replay_dir).map_err(|e| Error::io(&replay_dir, e))?;
        }
        let timing_path = out.join(TIMINGS_FILE);
        if timing_path.exists() {
            std::fs::remove_file(&timing_path).map_err(|e| Error::io(&timing_path, e))?;
        }

        let mut env = make_env(&cfg.env, cfg.train_levels, LevelMode::Train)?;
        let spec = env.spec().clone();
        let (wm, agent, world_opt, agent_opt) = build_models(&cfg, spec.action_count)?;

        let s = cfg.seed;
        let mut streams = RunStreams {
            levels: stream_rng(s, stream::ENV_LEVELS, 0),
            policy: stream_rng(s, stream::POLICY, 0),
            world: stream_rng(s, stream::WORLD, 0),
            replay: stream_rng(s, stream::REPLAY, 0),
            dream: stream_rng(s, stream::DREAM, 0),
            eval: stream_rng(s, stream::EVAL, 0),
        };
        let replay = replay::seed(
            env.as_mut(),
            cfg.seed_episodes,
            &cfg.shaping(),
            cfg.replay_capacity,
            &mut streams.levels,
            &mut streams.policy,
        )?;
        let store = EpisodeStore::open(replay_dir)?;
        store.sync(&replay)?;
        let metrics = MetricsLog::open(out.join(METRICS_FILE), Some(0))?;
        let progress = Progress {
            day_epochs_done: 0,
            night_epochs_done: 0,
            real_steps: replay.total_steps(),
            replay_episodes: replay.episodes().len(),
            metrics_records: 0,
            world_adam_steps: 0,
            agent_adam_steps: 0,
            day_adv: AdvNormState { ema_range: 0.0, decay: cfg.adv_decay },
            night_adv: AdvNormState { ema_range: 0.0, decay: cfg.adv_decay },
            streams,
            frozen_world_hash: None,
        };
        Ok(Self {
            timings: Timings::open(timing_path),
            cfg,
            out,
            spec,
            wm,
            agent,
            world_opt,
            agent_opt,
            replay,
            store,
            metrics,
            progress,
            probe: Probe::default(),
        })
    }

    /// Continues a run from a checkpoint. The output directory defaults to
    /// the run that wrote the checkpoint.
    pub fn resume(path: &Path, out: Option<PathBuf>) -> Result<Self> {
        let ckpt = checkpoint::load(path)?;
        let out = match out {
            Some(o) => o,
            None => path
                .parent()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .ok_or_else(|| Error::Checkpoint("cannot infer the run directory".into()))?,
        };
        let cfg = ckpt.config.clone();
        cfg.check()?;
        let env = make_env(&cfg.env, cfg.train_levels, LevelMode::Train)?;
        let spec = env.spec().clone();
        let (wm, agent, mut world_opt, mut agent_opt) = build_models(&cfg, spec.action_count)?;
        wm.params().load(&checkpoint::section(&ckpt.tensors, "world"))?;
        agent.params().load(&checkpoint::section(&ckpt.tensors, "agent"))?;
        world_opt.restore(ckpt.progress.world_adam_steps, &checkpoint::section(&ckpt.tensors, "world_opt"))?;
        agent_opt.restore(ckpt.progress.agent_adam_steps, &checkpoint::section(&ckpt.tensors, "agent_opt"))?;

        let store = EpisodeStore::open(out.join(REPLAY_DIR))?;
        let n = ckpt.progress.replay_episodes;
        let replay = store.load(spec.action_count, cfg.replay_capacity, Some(n))?;
        store.truncate(n)?;
        let metrics = MetricsLog::open(out.join(METRICS_FILE), Some(ckpt.progress.metrics_records))?;
        Ok(Self {
            timings: Timings::open(out.join(TIMINGS_FILE)),
            cfg,
            out,
            spec,
            wm,
            agent,
            world_opt,
            agent_opt,
            replay,
            store,
            metrics,
            progress: ckpt.progress,
            probe: Probe::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn world_model(&self) -> &WorldModel {
        &self.wm
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn replay(&self) -> &ReplayDataset {
        &self.replay
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn probe(&self) -> Probe {
        self.probe
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn global_epoch(&self) -> usize {
        self.progress.day_epochs_done + self.progress.night_epochs_done
    }

    pub fn finished(&self) -> bool {
        self.progress.day_epochs_done >= self.cfg.day_epochs
            && self.progress.night_epochs_done >= self.cfg.night_epochs
    }

    /// Runs every remaining epoch and returns the full metrics log.
    pub fn run(&mut self) -> Result<Vec<EpochRecord>> {
        while !self.finished() {
            self.step_epoch()?;
        }
        metrics::read_metrics(self.metrics.path())
    }

    /// Runs the next epoch (day, night or offline) and checkpoints on cadence.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let (phase, record) = if self.progress.day_epochs_done < self.cfg.day_epochs {
            let r = self.day_epoch()?;
            self.progress.day_epochs_done += 1;
            if self.progress.day_epochs_done == self.cfg.day_epochs {
                self.progress.frozen_world_hash = Some(self.wm.params().fingerprint()?);
            }
            (Phase::Day, r)
        } else if self.progress.night_epochs_done < self.cfg.night_epochs {
            if self.progress.frozen_world_hash.is_none() {
                self.progress.frozen_world_hash = Some(self.wm.params().fingerprint()?);
            }
            let r = if self.cfg.run_mode == RunMode::Offline {
                self.offline_epoch()?
            } else {
                self.night_epoch()?
            };
            self.progress.night_epochs_done += 1;
            (Phase::Night, r)
        } else {
            return Err(Error::Contract("the run has already finished".into()));
        };
        self.metrics.append(&record)?;
        self.progress.metrics_records = self.metrics.len();
        self.timings.append(&TimingRecord {
            phase,
            epoch: record.epoch,
            seconds: start.elapsed().as_secs_f64(),
        })?;
        log::info!(
            "{:?} epoch {} | train {:.2} | test {:.2} | replay {} steps",
            phase,
            record.epoch,
            record.train_reward,
            record.test_reward,
            record.replay_steps
        );
        let phase_end = self.progress.day_epochs_done == self.cfg.day_epochs && phase == Phase::Day
            || self.finished();
        if phase_end || self.global_epoch() % self.cfg.checkpoint_every == 0 {
            self.save_checkpoint()?;
        }
        Ok(record)
    }

    fn checkpoint_tensors(&self) -> std::collections::BTreeMap<String, Tensor> {
        let mut out = std::collections::BTreeMap::new();
        for (prefix, map) in [
            ("world", self.wm.params().snapshot()),
            ("agent", self.agent.params().snapshot()),
            ("world_opt", self.world_opt.state_tensors()),
            ("agent_opt", self.agent_opt.state_tensors()),
        ] {
            for (k, v) in map {
                out.insert(format!("{prefix}/{k}"), v);
            }
        }
        out
    }

    /// Writes `checkpoints/epoch_NNNN.safetensors` and refreshes `latest`.
    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        self.store.sync(&self.replay)?;
        self.progress.replay_episodes = self.replay.episodes().len();
        self.progress.world_adam_steps = self.world_opt.steps();
        self.progress.agent_adam_steps = self.agent_opt.steps();
        let ckpt = Checkpoint {
            config: self.cfg.clone(),
            progress: self.progress.clone(),
            tensors: self.checkpoint_tensors(),
        };
        let dir = self.out.join(CHECKPOINT_DIR);
        let path = dir.join(format!("epoch_{:04}.safetensors", self.global_epoch()));
        checkpoint::save(&path, &ckpt)?;
        let latest = dir.join(LATEST_CHECKPOINT);
        std::fs::copy(&path, &latest).map_err(|e| Error::io(&latest, e))?;
        Ok(path)
    }

    fn evaluate_both(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut policy = LatentPolicy::new(&self.wm, &self.agent);
        let reps = self.cfg.test_repetitions;
        let rng = &mut self.progress.streams.eval;
        let mut train_env = make_env(&self.cfg.env, self.cfg.train_levels, LevelMode::Train)?;
        let train = evaluate(train_env.as_mut(), &mut policy, LevelMode::Train, reps, rng)?;
        let mut test_env = make_env(&self.cfg.env, self.cfg.train_levels, LevelMode::Test)?;
        let test = evaluate(test_env.as_mut(), &mut policy, LevelMode::Test, reps, rng)?;
        Ok((train, test))
    }

    fn record(
        &self,
        phase: Phase,
        epoch: usize,
        train: &[f64],
        test: Vec<f64>,
        world: Option<WorldModelLossReport>,
        ppo: PpoReport,
    ) -> Result<EpochRecord> {
        Ok(EpochRecord {
            run_mode: self.cfg.run_mode.name().into(),
            env: self.cfg.env.clone(),
            seed: self.cfg.seed,
            phase,
            epoch,
            global_epoch: self.global_epoch(),
            real_steps: self.progress.real_steps,
            train_reward: mean(train),
            test_reward: mean(&test),
            test_returns: test,
            world,
            ppo,
            dream_reward: None,
            perturbations: None,
            world_hash: hex(self.wm.params().fingerprint()?),
            replay_steps: self.replay.total_steps(),
        })
    }

    /// World-model updates, parallel collection, on-policy PPO, replay append
    /// and evaluation.
    pub fn day_epoch(&mut self) -> Result<EpochRecord> {
        let cfg = self.cfg.clone();
        let mut world = WorldModelLossReport::default();
        for _ in 0..cfg.world_updates {
            let batch = self.replay.sample_sequences(
                cfg.world_batch,
                cfg.seq_len,
                cfg.priority,
                DTYPE,
                &mut self.progress.streams.replay,
            )?;
            let terms = self.wm.loss(&batch, LatentSampling::Draw(&mut self.progress.streams.world))?;
            let grads = terms.total.backward()?;
            self.world_opt.step(self.wm.params(), &grads)?;
            sum_reports(&mut world, &terms.report()?);
            self.probe.world_updates += 1;
        }
        scale_report(&mut world, 1.0 / cfg.world_updates as f64);

        let collected = self.collect()?;
        let ppo_batch = PpoBatch {
            features: collected.features,
            actions: collected.actions,
            old_log_probs: Some(collected.log_probs),
            advantages: normalize_advantages(&collected.advantages, &mut self.progress.day_adv)?,
            value_targets: collected.returns,
        };
        self.agent_opt.set_learning_rate(cfg.lr_day);
        let ppo = ppo_update(
            &self.agent,
            &mut self.agent_opt,
            &ppo_batch,
            &cfg.ppo(),
            &mut self.progress.streams.policy,
        )?;
        for ep in collected.episodes {
            self.replay.append(ep)?;
        }
        self.progress.real_steps += cfg.day_steps;

        let (train, test) = self.evaluate_both()?;
        self.record(Phase::Day, self.progress.day_epochs_done, &train, test, Some(world), ppo)
    }

    /// Collects `day_steps` transitions split across the parallel environments.
    fn collect(&mut self) -> Result<Collected> {
        let cfg = &self.cfg;
        let n = cfg.parallel_envs;
        let per_env: Vec<usize> = (0..n).map(|i| cfg.day_steps / n + usize::from(i < cfg.day_steps % n)).collect();
        let steps = per_env[0];
        let shaping = cfg.shaping();
        let actions_n = self.spec.action_count;
        let streams = &mut self.progress.streams;

        let mut envs = (0..n)
            .map(|_| make_env(&cfg.env, cfg.train_levels, LevelMode::Train))
            .collect::<Result<Vec<_>>>()?;
        let mut current = Vec::with_capacity(n);
        for env in envs.iter_mut() {
            let level = sample_level(&self.spec, LevelMode::Train, &mut streams.levels);
            current.push(fresh_episode(env.reset(level)?));
        }
        let mut finished = Vec::new();

        let first: Vec<&Frame> = current.iter().map(|e| &e.observations[0]).collect();
        let mut h = self.wm.zeros_hidden(n)?;
        let (_, z) = self.wm.encode(&h, &frames_tensor(&first)?, &mut streams.world)?;
        let mut state = Latent { h: h.clone(), z: z.detach() };
        let mut step_features = Vec::with_capacity(steps + 1);
        let mut actions = vec![Vec::new(); n];
        let mut log_probs = vec![Vec::new(); n];
        let mut rewards = vec![Vec::new(); n];
        let mut continues = vec![Vec::new(); n];

        for k in 0..steps {
            let feats = state.features()?;
            let policy = self.agent.policy_forward(&feats, &mut streams.policy)?;
            step_features.push(feats);
            let active: Vec<bool> = per_env.iter().map(|&p| k < p).collect();
            let outcomes = envs
                .par_iter_mut()
                .enumerate()
                .map(|(i, env)| {
                    if active[i] {
                        env.step(policy.sampled_actions[i]).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let mut keep = vec![1.0f64; n];
            for (i, out) in outcomes.into_iter().enumerate() {
                let Some(out) = out else { continue };
                let a = policy.sampled_actions[i];
                let shaped = shape_reward(out.reward, out.cont, out.success, &shaping);
                actions[i].push(a);
                log_probs[i].push(policy.log_probs[i]);
                rewards[i].push(shaped);
                continues[i].push(if out.cont { 1.0 } else { 0.0 });
                let ep = &mut current[i];
                ep.actions.push(a);
                ep.rewards.push(shaped);
                ep.continues.push(out.cont);
                ep.log_probs.push(policy.log_probs[i]);
                ep.observations.push(out.observation);
                if !out.cont {
                    ep.success = out.success;
                    if k + 1 < per_env[i] {
                        let level = sample_level(&self.spec, LevelMode::Train, &mut streams.levels);
                        let first = envs[i].reset(level)?;
                        finished.push(std::mem::replace(ep, fresh_episode(first)));
                        keep[i] = 0.0;
                    }
                }
            }
            let action = one_hot_actions(&policy.sampled_actions, actions_n, DTYPE)?;
            h = self.wm.recurrent_step(&state, &action)?.detach();
            let mask = Tensor::from_vec(keep, (n, 1), h.device())?.to_dtype(DTYPE)?;
            h = h.broadcast_mul(&mask)?;
            let frames: Vec<&Frame> = current.iter().map(|e| e.observations.last().expect("non-empty")).collect();
            let (_, z) = self.wm.encode(&h, &frames_tensor(&frames)?, &mut streams.world)?;
            state = Latent { h: h.clone(), z: z.detach() };
        }
        step_features.push(state.features()?);
        self.probe.env_steps += cfg.day_steps;

        // Rows of the stacked features are `k * n + i`.
        let stacked = Tensor::cat(&step_features, 0)?;
        let values = self.agent.values(&stacked)?;
        let mut rows = Vec::with_capacity(cfg.day_steps);
        let mut advantages = Vec::with_capacity(cfg.day_steps);
        let mut returns = Vec::with_capacity(cfg.day_steps);
        let mut flat_actions = Vec::with_capacity(cfg.day_steps);
        let mut flat_log_probs = Vec::with_capacity(cfg.day_steps);
        for i in 0..n {
            let v: Vec<f64> = (0..=per_env[i]).map(|k| values[k * n + i]).collect();
            let adv = gae(&rewards[i], &v, &continues[i], cfg.gamma_day, cfg.lambda)?;
            for (k, a) in adv.into_iter().enumerate() {
                rows.push((k * n + i) as u32);
                returns.push(a + v[k]);
                advantages.push(a);
            }
            flat_actions.extend_from_slice(&actions[i]);
            flat_log_probs.extend_from_slice(&log_probs[i]);
        }
        let idx = Tensor::from_slice(&rows, rows.len(), stacked.device())?;
        finished.extend(current.into_iter().filter(|e| !e.is_empty()));
        Ok(Collected {
            features: stacked.index_select(&idx, 0)?.detach(),
            actions: flat_actions,
            log_probs: flat_log_probs,
            advantages,
            returns,
            episodes: finished,
        })
    }

    fn check_frozen(&self) -> Result<()> {
        let now = self.wm.params().fingerprint()?;
        match self.progress.frozen_world_hash {
            Some(h) if h != now => Err(Error::Contract("world model changed after the day phase".into())),
            _ => Ok(()),
        }
    }

    fn replay_starts(&mut self, count: usize) -> Result<Latent> {
        let len = self.cfg.seq_len;
        let batch = self.replay.sample_sequences(count, len, 0.0, DTYPE, &mut self.progress.streams.replay)?;
        let lat = self.wm.filter(&batch, &mut self.progress.streams.world)?;
        let rows: Vec<u32> = (0..count).map(|b| (b * len + len - 1) as u32).collect();
        lat.select(&rows)
    }

    /// Imagined rollouts from the frozen world model followed by PPO.
    pub fn night_epoch(&mut self) -> Result<EpochRecord> {
        let cfg = self.cfg.clone();
        let mode = cfg
            .run_mode
            .augmentation()
            .ok_or_else(|| Error::Contract("offline runs do not dream".into()))?;
        self.check_frozen()?;
        let epoch = self.progress.night_epochs_done;
        let mut streams = DreamStreams::new(cfg.seed, epoch as u64);
        let starts = match cfg.night_start {
            NightStart::Random => sample_initial_state(&self.wm, cfg.night_starts(), &mut streams.init)?,
            NightStart::Replay => self.replay_starts(cfg.night_starts())?,
        };
        let dream = imagine_from(&self.wm, &self.agent, &starts, &cfg.dream(mode), &mut streams)?;
        self.probe.dream_rollouts += 1;
        let batch = dream.ppo_batch(cfg.gamma_night(), cfg.lambda, &mut self.progress.night_adv)?;
        self.agent_opt.set_learning_rate(cfg.lr_night);
        let ppo = ppo_update(&self.agent, &mut self.agent_opt, &batch, &cfg.ppo(), &mut self.progress.streams.policy)?;
        self.check_frozen()?;
        let (train, test) = self.evaluate_both()?;
        let mut rec = self.record(Phase::Night, epoch, &train, test, None, ppo)?;
        rec.dream_reward = Some(dream.mean_reward());
        rec.perturbations = Some(dream.counts);
        Ok(rec)
    }

    /// PPO on stored real sequences with the stored behavior log-probabilities,
    /// using the same number of sequences and steps as a night epoch.
    pub fn offline_epoch(&mut self) -> Result<EpochRecord> {
        let cfg = self.cfg.clone();
        self.check_frozen()?;
        let batch = self.offline_batch()?;
        self.agent_opt.set_learning_rate(cfg.lr_night);
        let ppo = ppo_update(&self.agent, &mut self.agent_opt, &batch, &cfg.ppo(), &mut self.progress.streams.policy)?;
        self.check_frozen()?;
        let (train, test) = self.evaluate_both()?;
        self.record(Phase::Night, self.progress.night_epochs_done, &train, test, None, ppo)
    }

    fn offline_batch(&mut self) -> Result<PpoBatch> {
        let cfg = &self.cfg;
        let len = cfg.horizon + 1;
        let count = cfg.night_starts();
        let windows = self
            .replay
            .sample_windows(count, len, cfg.priority, &mut self.progress.streams.replay)?;
        let seq = self.replay.gather(&windows, len, DTYPE)?;
        let lat = self.wm.filter(&seq, &mut self.progress.streams.world)?;
        let feats = lat.features()?;
        let values = self.agent.values(&feats)?;
        let mut rows = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for (b, w) in windows.iter().enumerate() {
            let steps = cfg.horizon.min(self.replay.episodes()[w.episode].len() - w.start);
            if steps == 0 {
                continue;
            }
            let base = b * len;
            let r = &seq.rewards[base..base + steps];
            let c = &seq.continues[base..base + steps];
            let v = &values[base..=base + steps];
            let adv = gae(r, v, c, cfg.gamma_day, cfg.lambda)?;
            for (t, a) in adv.into_iter().enumerate() {
                rows.push((base + t) as u32);
                returns.push(a + v[t]);
                advantages.push(a);
                actions.push(seq.actions[base + t]);
                old.push(seq.log_probs[base + t]);
            }
        }
        if rows.is_empty() {
            return Err(Error::Sampling("no stored transitions for offline training".into()));
        }
        let idx = Tensor::from_slice(&rows, rows.len(), feats.device())?;
        Ok(PpoBatch {
            features: feats.index_select(&idx, 0)?.detach(),
            actions,
            old_log_probs: Some(old),
            advantages: normalize_advantages(&advantages, &mut self.progress.night_adv)?,
            value_targets: returns,
        })
    }
}

/// Runs a complete experiment in `out` and returns its metrics.
pub fn run_experiment(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Vec<EpochRecord>> {
    Trainer::new(cfg, out)?.run()
}
