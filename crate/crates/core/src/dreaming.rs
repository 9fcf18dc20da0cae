//! Night-phase trajectory generation.
//!
//! Dreams start from random latent states, are rolled out through the frozen
//! world model with the current policy, and are occasionally perturbed by one
//! of three augmentations: a random swing of the latent, DeepDream-style
//! ascent on the encoder's last convolution layer, or ascent on the squared
//! change of the critic's value.

use candle_core::{DType, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::{gae, normalize_advantages, AdvNormState, Agent, PpoBatch};
use crate::error::{Error, Result};
use crate::nn;
use crate::rng::{stream_rng, StreamRng};
use crate::worldmodel::{check_one_hot, decode_bucket_tensor, one_hot_actions, one_hot_latent, Latent, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMode {
    None,
    RandomSwing,
    DeepDream,
    ValueDiversify,
    /// One of the three transformations, chosen uniformly per perturbation.
    Mixture,
}

impl AugmentationMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "random_swing" => Self::RandomSwing,
            "deep_dream" => Self::DeepDream,
            "value_diversify" => Self::ValueDiversify,
            "mixture" => Self::Mixture,
            other => return Err(Error::Config(format!("unknown augmentation mode {other:?}"))),
        })
    }
}

/// How the predicted continue probability enters the returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinueMode {
    /// The probability itself is the discount weight.
    Soft,
    /// Thresholded at 0.5.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamConfig {
    pub horizon: usize,
    pub mode: AugmentationMode,
    /// Per-step perturbation probability; `None` means `1 / horizon`.
    pub epsilon: Option<f64>,
    pub p_swing: f64,
    pub deep_dream_steps: usize,
    pub deep_dream_step_size: f64,
    pub value_steps: usize,
    pub value_step_size: f64,
    pub continues: ContinueMode,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            mode: AugmentationMode::None,
            epsilon: None,
            p_swing: 0.5,
            deep_dream_steps: 10,
            deep_dream_step_size: 0.1,
            value_steps: 10,
            value_step_size: 0.5,
            continues: ContinueMode::Soft,
        }
    }
}

impl DreamConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(1.0 / self.horizon.max(1) as f64)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon < 1 {
            errs.push("imagination horizon must be at least 1".into());
        }
        let eps = self.epsilon();
        if !(0.0..=1.0).contains(&eps) {
            errs.push(format!("dream perturbation probability {eps} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_swing) {
            errs.push(format!("swing probability {} outside [0, 1]", self.p_swing));
        }
        if !(self.deep_dream_step_size.is_finite() && self.value_step_size.is_finite()) {
            errs.push("ascent step sizes must be finite".into());
        }
        errs
    }
}

/// Independent random streams for one rollout batch.
#[derive(Debug, Clone)]
pub struct DreamStreams {
    pub init: StreamRng,
    pub policy: StreamRng,
    pub prior: StreamRng,
    pub perturb: StreamRng,
}

impl DreamStreams {
    pub fn new(seed: u64, index: u64) -> Self {
        Self {
            init: stream_rng(seed, "dream-init", index),
            policy: stream_rng(seed, "dream-policy", index),
            prior: stream_rng(seed, "dream-prior", index),
            perturb: stream_rng(seed, "dream-perturb", index),
        }
    }
}

/// Unit-normal `h` and uniformly drawn one-hot `z`, before any model step.
pub fn random_latent(
    hidden: usize,
    categoricals: usize,
    classes: usize,
    batch: usize,
    dtype: DType,
    rng: &mut StreamRng,
) -> Result<Latent> {
    let h: Vec<f64> = (0..batch * hidden).map(|_| rng.sample(StandardNormal)).collect();
    let idx: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..categoricals).map(|_| rng.random_range(0..classes)).collect())
        .collect();
    Ok(Latent {
        h: nn::from_rows(&h, &[batch, hidden], dtype)?,
        z: one_hot_latent(&idx, classes, dtype)?,
    })
}

/// Random start states: one recurrent step from a random latent with a zero
/// action, followed by a draw from the transition prior.
pub fn sample_initial_state(wm: &WorldModel, batch: usize, rng: &mut StreamRng) -> Result<Latent> {
    let cfg = wm.config();
    let init = random_latent(cfg.hidden, cfg.categoricals, cfg.classes, batch, wm.dtype(), rng)?;
    let h = wm.recurrent_step(&init, &wm.zeros_action(batch)?)?.detach();
    let (_, z) = wm.predict_transition(&h, rng)?;
    Ok(Latent { h, z: z.detach() })
}

#[derive(Debug, Clone)]
pub struct SwingOutcome {
    pub state: Latent,
    /// Categoricals whose class actually changed.
    pub changed: usize,
    pub total: usize,
}

/// Adds unit-normal noise to `h`; each categorical is redrawn uniformly with
/// probability `p_swing` (the redraw may pick the same class).
pub fn random_swing(s: &Latent, classes: usize, p_swing: f64, rng: &mut StreamRng) -> Result<SwingOutcome> {
    let h = nn::to_vec2(&s.h)?;
    let mut idx = s.classes(classes)?;
    let mut changed = 0;
    let mut total = 0;
    for row in &mut idx {
        for k in row.iter_mut() {
            total += 1;
            if rng.random::<f64>() < p_swing {
                let new = rng.random_range(0..classes);
                changed += (new != *k) as usize;
                *k = new;
            }
        }
    }
    let (b, hidden) = s.h.dims2()?;
    let noisy: Vec<f64> = h
        .iter()
        .flatten()
        .map(|x| x + rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(SwingOutcome {
        state: Latent {
            h: nn::from_rows(&noisy, &[b, hidden], s.h.dtype())?,
            z: one_hot_latent(&idx, classes, s.z.dtype())?,
        },
        changed,
        total,
    })
}

/// Row-wise argmax over each group of `classes` entries; ties go to the lowest index.
pub fn project_to_one_hot(z: &Tensor, classes: usize) -> Result<Tensor> {
    let rows = nn::to_vec2(z)?;
    let idx = rows
        .iter()
        .map(|row| {
            row.chunks(classes)
                .map(|cat| {
                    let mut best = 0;
                    for (i, &x) in cat.iter().enumerate() {
                        if !x.is_finite() {
                            return Err(Error::Domain("non-finite relaxed latent".into()));
                        }
                        if x > cat[best] {
                            best = i;
                        }
                    }
                    Ok(best)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if idx.is_empty() {
        return Ok(z.zeros_like()?);
    }
    one_hot_latent(&idx, classes, z.dtype())
}

/// A per-row scalar objective of a (possibly relaxed) latent state.
pub trait AscentObjective {
    /// Returns `[B]`, differentiable w.r.t. `h` and `z`.
    fn evaluate(&self, h: &Tensor, z: &Tensor) -> Result<Tensor>;
}

/// Mean activation of the encoder's last convolution on the decoded image.
pub struct DeepDreamObjective<'a>(pub &'a WorldModel);

impl AscentObjective for DeepDreamObjective<'_> {
    fn evaluate(&self, h: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.0.dream_activation(&Latent { h: h.clone(), z: z.clone() })
    }
}

/// Differentiable decoded critic value.
pub fn critic_value(agent: &Agent, h: &Tensor, z: &Tensor) -> Result<Tensor> {
    let features = Tensor::cat(&[h, z], 1)?;
    let probs = nn::softmax(&agent.critic_logits(&features)?)?;
    decode_bucket_tensor(&probs, agent.buckets())
}

/// `(v(h, z) - v0)^2` with `v0` held constant.
pub struct ValueGapObjective<'a> {
    pub agent: &'a Agent,
    pub baseline: Tensor,
}

impl AscentObjective for ValueGapObjective<'_> {
    fn evaluate(&self, h: &Tensor, z: &Tensor) -> Result<Tensor> {
        Ok((critic_value(self.agent, h, z)? - &self.baseline)?.sqr()?)
    }
}

/// `sign * v(h, z)` per row.
pub struct SignedValueObjective<'a> {
    pub agent: &'a Agent,
    pub signs: Tensor,
}

impl AscentObjective for SignedValueObjective<'_> {
    fn evaluate(&self, h: &Tensor, z: &Tensor) -> Result<Tensor> {
        Ok((critic_value(self.agent, h, z)? * &self.signs)?)
    }
}

#[derive(Debug, Clone)]
pub struct AscentStep {
    pub state: Latent,
    /// Objective at the input state.
    pub objective: Vec<f64>,
    /// Squared gradient norm per row, over `h` and `z` jointly.
    pub grad_sq: Vec<f64>,
}

/// One gradient-ascent step on the relaxed state: `x + step_size * grad`.
/// Rows are independent, so the summed objective yields per-row gradients.
pub fn ascent_step(obj: &dyn AscentObjective, s: &Latent, step_size: f64) -> Result<AscentStep> {
    let h = Var::from_tensor(&s.h.detach())?;
    let z = Var::from_tensor(&s.z.detach())?;
    let value = obj.evaluate(h.as_tensor(), z.as_tensor())?;
    let grads = value.sum_all()?.backward()?;
    let gh = grads.get(h.as_tensor()).cloned().unwrap_or(h.zeros_like()?);
    let gz = grads.get(z.as_tensor()).cloned().unwrap_or(z.zeros_like()?);
    let grad_sq = nn::to_vec1(&(gh.sqr()?.sum(1)? + gz.sqr()?.sum(1)?)?)?;
    let state = Latent {
        h: (h.as_tensor() + (gh * step_size)?)?.detach(),
        z: (z.as_tensor() + (gz * step_size)?)?.detach(),
    };
    Ok(AscentStep {
        state,
        objective: nn::to_vec1(&value)?,
        grad_sq,
    })
}

/// Ascent on the DeepDream objective over `(h, z)`; `z` is projected back to
/// one-hot once the loop ends.
pub fn deep_dream(wm: &WorldModel, s: &Latent, steps: usize, step_size: f64) -> Result<Latent> {
    if steps == 0 {
        return Ok(s.clone());
    }
    let obj = DeepDreamObjective(wm);
    let mut state = s.detach();
    for _ in 0..steps {
        state = ascent_step(&obj, &state, step_size)?.state;
    }
    Ok(Latent {
        h: state.h,
        z: project_to_one_hot(&state.z, wm.config().classes)?,
    })
}

/// Ascent on the squared value change, projecting `z` after every step.
///
/// The objective's gradient vanishes at the starting point, so the first
/// step follows `±∇v` with a random sign per row.
pub fn value_diversify(
    agent: &Agent,
    s: &Latent,
    classes: usize,
    steps: usize,
    step_size: f64,
    rng: &mut StreamRng,
) -> Result<Latent> {
    if steps == 0 {
        return Ok(s.clone());
    }
    let b = s.batch();
    let baseline = critic_value(agent, &s.h, &s.z)?.detach();
    let signs: Vec<f64> = (0..b).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let first = SignedValueObjective {
        agent,
        signs: nn::from_rows(&signs, &[b], s.h.dtype())?,
    };
    let gap = ValueGapObjective { agent, baseline };
    let mut state = s.detach();
    for step in 0..steps {
        let obj: &dyn AscentObjective = if step == 0 { &first } else { &gap };
        let next = ascent_step(obj, &state, step_size)?.state;
        state = Latent {
            h: next.h,
            z: project_to_one_hot(&next.z, classes)?,
        };
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationCounts {
    pub random_swing: usize,
    pub deep_dream: usize,
    pub value_diversify: usize,
}

impl PerturbationCounts {
    pub fn total(&self) -> usize {
        self.random_swing + self.deep_dream + self.value_diversify
    }

    pub fn add(&mut self, other: &Self) {
        self.random_swing += other.random_swing;
        self.deep_dream += other.deep_dream;
        self.value_diversify += other.value_diversify;
    }
}

/// `B` imagined trajectories of length `H`. Per-step arrays are `[B][H]`;
/// `states[t]` holds the `B` states visited at step `t` (after perturbation).
#[derive(Debug, Clone)]
pub struct DreamBatch {
    pub states: Vec<Latent>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub continues: Vec<Vec<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Critic value of the state reached after the last step.
    pub last_values: Vec<f64>,
    pub perturbations: Vec<usize>,
    pub counts: PerturbationCounts,
}

impl DreamBatch {
    pub fn batch(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn mean_reward(&self) -> f64 {
        let n = (self.batch() * self.horizon()).max(1) as f64;
        self.rewards.iter().flatten().sum::<f64>() / n
    }

    /// Flattens into a PPO batch, rows ordered `t * B + b`.
    pub fn ppo_batch(&self, gamma: f64, lambda: f64, norm: &mut AdvNormState) -> Result<PpoBatch> {
        let (b, h) = (self.batch(), self.horizon());
        let mut adv_bt = Vec::with_capacity(b);
        for i in 0..b {
            let mut v = self.values[i].clone();
            v.push(self.last_values[i]);
            adv_bt.push(gae(&self.rewards[i], &v, &self.continues[i], gamma, lambda)?);
        }
        let mut adv = Vec::with_capacity(b * h);
        let mut targets = Vec::with_capacity(b * h);
        let mut actions = Vec::with_capacity(b * h);
        let mut old = Vec::with_capacity(b * h);
        for t in 0..h {
            for i in 0..b {
                adv.push(adv_bt[i][t]);
                targets.push(adv_bt[i][t] + self.values[i][t]);
                actions.push(self.actions[i][t]);
                old.push(self.log_probs[i][t]);
            }
        }
        let feats: Vec<Tensor> = self.states.iter().map(|s| s.features()).collect::<Result<_>>()?;
        Ok(PpoBatch {
            features: Tensor::cat(&feats, 0)?,
            actions,
            old_log_probs: Some(old),
            advantages: normalize_advantages(&adv, norm)?,
            value_targets: targets,
        })
    }
}

fn replace_rows(full: &Latent, rows: &[usize], part: &Latent) -> Result<Latent> {
    let mut h = nn::to_vec2(&full.h)?;
    let mut z = nn::to_vec2(&full.z)?;
    let ph = nn::to_vec2(&part.h)?;
    let pz = nn::to_vec2(&part.z)?;
    for (k, &r) in rows.iter().enumerate() {
        h[r].clone_from(&ph[k]);
        z[r].clone_from(&pz[k]);
    }
    let flat = |m: Vec<Vec<f64>>| m.into_iter().flatten().collect::<Vec<_>>();
    Ok(Latent {
        h: nn::from_rows(&flat(h), full.h.dims(), full.h.dtype())?,
        z: nn::from_rows(&flat(z), full.z.dims(), full.z.dtype())?,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Swing,
    Deep,
    Value,
}

fn perturb(
    wm: &WorldModel,
    agent: &Agent,
    state: &Latent,
    cfg: &DreamConfig,
    rng: &mut StreamRng,
    per_row: &mut [usize],
    counts: &mut PerturbationCounts,
) -> Result<Latent> {
    let eps = cfg.epsilon();
    if cfg.mode == AugmentationMode::None || eps <= 0.0 {
        return Ok(state.clone());
    }
    let mut groups: [(Kind, Vec<usize>); 3] = [(Kind::Swing, vec![]), (Kind::Deep, vec![]), (Kind::Value, vec![])];
    for (row, count) in per_row.iter_mut().enumerate() {
        if rng.random::<f64>() >= eps {
            continue;
        }
        let kind = match cfg.mode {
            AugmentationMode::RandomSwing => 0,
            AugmentationMode::DeepDream => 1,
            AugmentationMode::ValueDiversify => 2,
            _ => rng.random_range(0..3),
        };
        groups[kind].1.push(row);
        *count += 1;
    }
    let classes = wm.config().classes;
    let mut out = state.clone();
    for (kind, rows) in &groups {
        if rows.is_empty() {
            continue;
        }
        let idx: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
        let sub = state.select(&idx)?;
        let new = match kind {
            Kind::Swing => {
                counts.random_swing += rows.len();
                random_swing(&sub, classes, cfg.p_swing, rng)?.state
            }
            Kind::Deep => {
                counts.deep_dream += rows.len();
                deep_dream(wm, &sub, cfg.deep_dream_steps, cfg.deep_dream_step_size)?
            }
            Kind::Value => {
                counts.value_diversify += rows.len();
                value_diversify(agent, &sub, classes, cfg.value_steps, cfg.value_step_size, rng)?
            }
        };
        out = replace_rows(&out, rows, &new)?;
    }
    check_one_hot(&out.z, classes)?;
    Ok(out)
}

/// Rolls the policy through the world model from random start states.
pub fn imagine_rollout(
    wm: &WorldModel,
    agent: &Agent,
    batch: usize,
    cfg: &DreamConfig,
    streams: &mut DreamStreams,
) -> Result<DreamBatch> {
    let starts = sample_initial_state(wm, batch, &mut streams.init)?;
    imagine_from(wm, agent, &starts, cfg, streams)
}

/// Rolls the policy through the world model from the given start states.
///
/// At each step the state may be perturbed (before the policy acts), then the
/// action is sampled, the recurrent core advances, the next latent is drawn
/// from the prior and the reward and continue heads score the new state.
pub fn imagine_from(
    wm: &WorldModel,
    agent: &Agent,
    starts: &Latent,
    cfg: &DreamConfig,
    streams: &mut DreamStreams,
) -> Result<DreamBatch> {
    if cfg.horizon < 1 {
        return Err(Error::Config("imagination horizon must be at least 1".into()));
    }
    let b = starts.batch();
    let h_len = cfg.horizon;
    let actions_n = wm.config().actions;
    let mut out = DreamBatch {
        states: Vec::with_capacity(h_len),
        actions: vec![Vec::with_capacity(h_len); b],
        rewards: vec![Vec::with_capacity(h_len); b],
        continues: vec![Vec::with_capacity(h_len); b],
        log_probs: vec![Vec::with_capacity(h_len); b],
        values: vec![Vec::with_capacity(h_len); b],
        last_values: Vec::new(),
        perturbations: vec![0; b],
        counts: PerturbationCounts::default(),
    };
    let mut state = starts.detach();
    for _ in 0..h_len {
        state = perturb(
            wm,
            agent,
            &state,
            cfg,
            &mut streams.perturb,
            &mut out.perturbations,
            &mut out.counts,
        )?;
        let feats = state.features()?;
        let policy = agent.policy_forward(&feats, &mut streams.policy)?;
        let values = agent.values(&feats)?;
        let action = one_hot_actions(&policy.sampled_actions, actions_n, wm.dtype())?;
        let h = wm.recurrent_step(&state, &action)?.detach();
        let (_, z) = wm.predict_transition(&h, &mut streams.prior)?;
        let next = Latent { h, z: z.detach() };
        let (_, rewards) = wm.predict_reward(&next)?;
        let conts = wm.predict_continue(&next)?;
        for i in 0..b {
            let c = match cfg.continues {
                ContinueMode::Soft => conts[i],
                ContinueMode::Hard => f64::from(conts[i] >= 0.5),
            };
            if !rewards[i].is_finite() || !values[i].is_finite() {
                return Err(Error::Domain("non-finite prediction during imagination".into()));
            }
            out.actions[i].push(policy.sampled_actions[i]);
            out.log_probs[i].push(policy.log_probs[i]);
            out.values[i].push(values[i]);
            out.rewards[i].push(rewards[i]);
            out.continues[i].push(c);
        }
        out.states.push(state);
        state = next;
    }
    out.last_values = agent.values(&state.features()?)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::rng::stream_rng;
    use crate::worldmodel::tests::tiny_config;

    fn models(seed: u64) -> (WorldModel, Agent) {
        let cfg = tiny_config();
        let wm = WorldModel::new(cfg.clone(), DType::F32, &mut stream_rng(seed, "wm", 0)).unwrap();
        let agent = Agent::new(
            AgentConfig {
                features: cfg.feature_size(),
                actions: cfg.actions,
                units: 8,
                mlp_layers: 1,
                bins: cfg.bins,
                bins_lo: cfg.bins_lo,
                bins_hi: cfg.bins_hi,
            },
            DType::F32,
            &mut stream_rng(seed, "agent", 0),
        )
        .unwrap();
        (wm, agent)
    }

    #[test]
    fn projection_examples() {
        let z = Tensor::new(&[[0.1f64, 0.9, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0]], &candle_core::Device::Cpu).unwrap();
        let p = nn::to_vec2(&project_to_one_hot(&z, 4).unwrap()).unwrap();
        assert_eq!(p[0], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let again = project_to_one_hot(&project_to_one_hot(&z, 4).unwrap(), 4).unwrap();
        assert_eq!(nn::to_vec2(&again).unwrap(), p);
    }

    #[test]
    fn initial_states_are_valid() {
        let (wm, _) = models(0);
        let s = sample_initial_state(&wm, 16, &mut stream_rng(1, "s", 0)).unwrap();
        s.validate(wm.config().classes).unwrap();
        assert_eq!(s.h.dims(), &[16, wm.config().hidden]);
    }

    #[test]
    fn swing_with_zero_probability_keeps_z() {
        let (wm, _) = models(0);
        let s = sample_initial_state(&wm, 8, &mut stream_rng(1, "s", 0)).unwrap();
        let out = random_swing(&s, 4, 0.0, &mut stream_rng(2, "w", 0)).unwrap();
        assert_eq!(out.changed, 0);
        assert_eq!(nn::to_vec2(&out.state.z).unwrap(), nn::to_vec2(&s.z).unwrap());
        assert_ne!(nn::to_vec2(&out.state.h).unwrap(), nn::to_vec2(&s.h).unwrap());
    }

    #[test]
    fn zero_steps_are_identity() {
        let (wm, agent) = models(0);
        let s = sample_initial_state(&wm, 4, &mut stream_rng(1, "s", 0)).unwrap();
        let d = deep_dream(&wm, &s, 0, 0.1).unwrap();
        let v = value_diversify(&agent, &s, 4, 0, 0.5, &mut stream_rng(0, "v", 0)).unwrap();
        for out in [d, v] {
            assert_eq!(nn::to_vec2(&out.h).unwrap(), nn::to_vec2(&s.h).unwrap());
            assert_eq!(nn::to_vec2(&out.z).unwrap(), nn::to_vec2(&s.z).unwrap());
        }
    }

    #[test]
    fn ascent_leaves_parameters_untouched() {
        let (wm, agent) = models(3);
        let before = (wm.params().fingerprint().unwrap(), agent.params().fingerprint().unwrap());
        let s = sample_initial_state(&wm, 4, &mut stream_rng(1, "s", 0)).unwrap();
        let d = deep_dream(&wm, &s, 3, 0.1).unwrap();
        check_one_hot(&d.z, 4).unwrap();
        let v = value_diversify(&agent, &s, 4, 3, 0.5, &mut stream_rng(0, "v", 0)).unwrap();
        check_one_hot(&v.z, 4).unwrap();
        let after = (wm.params().fingerprint().unwrap(), agent.params().fingerprint().unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let (wm, agent) = models(4);
        let cfg = DreamConfig {
            horizon: 5,
            mode: AugmentationMode::Mixture,
            epsilon: Some(0.5),
            deep_dream_steps: 2,
            value_steps: 2,
            ..DreamConfig::default()
        };
        let a = imagine_rollout(&wm, &agent, 6, &cfg, &mut DreamStreams::new(9, 0)).unwrap();
        let b = imagine_rollout(&wm, &agent, 6, &cfg, &mut DreamStreams::new(9, 0)).unwrap();
        assert_eq!(a.batch(), 6);
        assert_eq!(a.horizon(), 5);
        assert!(a.rewards.iter().all(|r| r.len() == 5));
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.perturbations.iter().sum::<usize>(), a.counts.total());
        for s in &a.states {
            s.validate(4).unwrap();
        }
        let ppo = a.ppo_batch(0.9, 0.95, &mut AdvNormState::default()).unwrap();
        assert_eq!(ppo.len(), 30);
    }

    #[test]
    fn no_perturbation_without_epsilon() {
        let (wm, agent) = models(4);
        let cfg = DreamConfig {
            horizon: 8,
            mode: AugmentationMode::Mixture,
            epsilon: Some(0.0),
            ..DreamConfig::default()
        };
        let out = imagine_rollout(&wm, &agent, 4, &cfg, &mut DreamStreams::new(1, 0)).unwrap();
        assert_eq!(out.counts, PerturbationCounts::default());
        assert!(imagine_rollout(&wm, &agent, 4, &DreamConfig { horizon: 0, ..cfg }, &mut DreamStreams::new(1, 0)).is_err());
    }
}
