//! Actor-critic over latent states, trained with PPO.
//!
//! The critic predicts a softmax over symlog-spaced buckets (like the reward
//! head). Advantages come from GAE and are scaled by an exponentially
//! averaged 5th-95th percentile range before the policy update.

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encodings::{symlog_two_hot_rows, BucketSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Init, Mlp, Params};
use crate::rng::StreamRng;
use crate::worldmodel::{decode_bucket_rows, sample_index};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Width of the `(h, flat z)` input.
    pub features: usize,
    pub actions: usize,
    pub units: usize,
    pub mlp_layers: usize,
    pub bins: usize,
    pub bins_lo: f64,
    pub bins_hi: f64,
}

/// Batched policy output for `B` states.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// `[B][A]`
    pub action_probs: Vec<Vec<f64>>,
    pub sampled_actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CriticOutput {
    /// `[B, K]`
    pub bin_probs: Tensor,
    pub values: Vec<f64>,
}

pub struct Agent {
    cfg: AgentConfig,
    buckets: BucketSpec,
    params: Params,
    actor: Mlp,
    critic: Mlp,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("cfg", &self.cfg)
            .field("params", &self.params)
            .finish()
    }
}

impl Agent {
    pub fn new(cfg: AgentConfig, dtype: DType, rng: &mut StreamRng) -> Result<Self> {
        if cfg.actions < 2 {
            return Err(Error::Config("the policy needs at least two actions".into()));
        }
        let buckets = BucketSpec::new(cfg.bins, cfg.bins_lo, cfg.bins_hi)?;
        let mut params = Params::new(dtype);
        let mut init = Init::new(&mut params, rng);
        // Small actor read-out keeps the initial policy close to uniform;
        // the zero critic read-out starts every value at 0.
        let actor = Mlp::new(
            &mut init.sub("actor"),
            cfg.features,
            cfg.units,
            cfg.mlp_layers,
            Some((cfg.actions, 0.01)),
        )?;
        let critic = Mlp::new(
            &mut init.sub("critic"),
            cfg.features,
            cfg.units,
            cfg.mlp_layers,
            Some((cfg.bins, 0.0)),
        )?;
        Ok(Self {
            cfg,
            buckets,
            params,
            actor,
            critic,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn buckets(&self) -> &BucketSpec {
        &self.buckets
    }

    fn check(&self, features: &Tensor) -> Result<()> {
        match features.dims() {
            [_, f] if *f == self.cfg.features => Ok(()),
            other => Err(Error::Shape(format!(
                "agent expects [B, {}] features, got {other:?}",
                self.cfg.features
            ))),
        }
    }

    /// Action log-probabilities `[B, A]`.
    pub fn policy_log_probs(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        nn::log_softmax(&self.actor.forward(features)?)
    }

    /// Critic bucket logits `[B, K]`.
    pub fn critic_logits(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        self.critic.forward(features)
    }

    pub fn policy_forward(&self, features: &Tensor, rng: &mut StreamRng) -> Result<PolicyOutput> {
        let logp = nn::to_vec2(&self.policy_log_probs(features)?)?;
        let mut out = PolicyOutput {
            action_probs: Vec::with_capacity(logp.len()),
            sampled_actions: Vec::with_capacity(logp.len()),
            log_probs: Vec::with_capacity(logp.len()),
            entropy: Vec::with_capacity(logp.len()),
        };
        for row in logp {
            let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
            let a = sample_index(&probs, rng);
            out.entropy.push(-probs.iter().zip(&row).map(|(p, l)| p * l).sum::<f64>());
            out.log_probs.push(row[a]);
            out.sampled_actions.push(a);
            out.action_probs.push(probs);
        }
        Ok(out)
    }

    pub fn critic_forward(&self, features: &Tensor) -> Result<CriticOutput> {
        let bin_probs = nn::softmax(&self.critic_logits(features)?)?;
        let values = decode_bucket_rows(&bin_probs, &self.buckets)?;
        Ok(CriticOutput { bin_probs, values })
    }

    /// Decoded critic values.
    pub fn values(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(self.critic_forward(features)?.values)
    }
}

/// Generalized advantage estimation.
///
/// `rewards[t]` and `continues[t]` belong to the transition out of state `t`;
/// `values` has one more entry than `rewards` (the bootstrap value).
/// `continues` may be fractional, in which case it scales the discount.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let t = rewards.len();
    if values.len() != t + 1 || continues.len() != t {
        return Err(Error::Shape(format!(
            "gae needs values of length T+1 and continues of length T (T = {t}), got {} and {}",
            values.len(),
            continues.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("gamma {gamma} and lambda {lambda} must lie in [0, 1]")));
    }
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let discount = gamma * continues[i];
        let delta = rewards[i] + discount * values[i + 1] - values[i];
        next = delta + discount * lambda * next;
        adv[i] = next;
    }
    Ok(adv)
}

/// Exponential moving average of the 5th-95th percentile range of advantages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvNormState {
    pub ema_range: f64,
    pub decay: f64,
}

impl Default for AdvNormState {
    fn default() -> Self {
        Self {
            ema_range: 0.0,
            decay: 0.99,
        }
    }
}

/// Percentile with linear interpolation between order statistics; `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Updates the range average with this batch and divides by `max(1, range)`.
pub fn normalize_advantages(adv: &[f64], state: &mut AdvNormState) -> Result<Vec<f64>> {
    if adv.is_empty() {
        return Err(Error::Domain("cannot normalize an empty advantage batch".into()));
    }
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("non-finite advantage".into()));
    }
    let mut sorted = adv.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let range = percentile(&sorted, 0.95) - percentile(&sorted, 0.05);
    state.ema_range = state.decay * state.ema_range + (1.0 - state.decay) * range;
    let scale = state.ema_range.max(1.0);
    Ok(adv.iter().map(|a| a / scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub iterations: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Transitions per gradient step.
    pub minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            iterations: 4,
            value_coef: 0.5,
            entropy_coef: 0.001,
            minibatch: 192,
        }
    }
}

/// Rollout data for a PPO update.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    /// `[N, F]` latent features (no gradient).
    pub features: Tensor,
    pub actions: Vec<usize>,
    /// Log-probabilities under the policy that collected the data.
    pub old_log_probs: Option<Vec<f64>>,
    /// Normalized advantages.
    pub advantages: Vec<f64>,
    /// `Â + v(s)` from unnormalized advantages.
    pub value_targets: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn validate(&self) -> Result<&[f64]> {
        let old = self
            .old_log_probs
            .as_deref()
            .ok_or_else(|| Error::Contract("PPO batch lacks behavior log-probabilities".into()))?;
        let n = self.actions.len();
        if n == 0 {
            return Err(Error::Contract("empty PPO batch".into()));
        }
        if old.len() != n
            || self.advantages.len() != n
            || self.value_targets.len() != n
            || self.features.dims()[0] != n
        {
            return Err(Error::Shape("PPO batch arrays have inconsistent lengths".into()));
        }
        Ok(old)
    }

    fn subset(&self, rows: &[usize]) -> Result<PpoBatch> {
        let idx: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
        let idx = Tensor::from_slice(&idx, idx.len(), self.features.device())?;
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Ok(PpoBatch {
            features: self.features.index_select(&idx, 0)?,
            actions: rows.iter().map(|&r| self.actions[r]).collect(),
            old_log_probs: self.old_log_probs.as_deref().map(pick),
            advantages: pick(&self.advantages),
            value_targets: pick(&self.value_targets),
        })
    }
}

/// Differentiable PPO loss terms on one minibatch.
#[derive(Debug, Clone)]
pub struct PpoTerms {
    /// Mean clipped surrogate objective `L_CLIP` (to be maximized).
    pub surrogate: Tensor,
    /// Mean categorical cross-entropy of the critic against the two-hot targets.
    pub value: Tensor,
    pub entropy: Tensor,
    /// `-L_CLIP + c_v * L_VF - c_e * H`.
    pub total: Tensor,
    pub clip_fraction: f64,
    pub ratios: Vec<f64>,
}

/// Builds the PPO loss. The clipped branch is taken per sample from the
/// current ratio and advantage sign, so a clipped sample has an exactly zero
/// policy gradient.
pub fn ppo_loss(agent: &Agent, batch: &PpoBatch, cfg: &PpoConfig) -> Result<PpoTerms> {
    let old = batch.validate()?;
    let n = batch.len();
    let dtype = batch.features.dtype();
    let features = batch.features.detach();

    let logp_all = agent.policy_log_probs(&features)?;
    let action_idx: Vec<u32> = batch.actions.iter().map(|&a| a as u32).collect();
    let action_idx = Tensor::from_slice(&action_idx, (n, 1), features.device())?;
    let logp = logp_all.gather(&action_idx, 1)?.squeeze(1)?;
    let old_t = nn::from_rows(old, &[n], dtype)?;
    let ratio = (&logp - old_t)?.exp()?;

    let ratios = nn::to_vec1(&ratio)?;
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let mut active = Vec::with_capacity(n);
    let mut clipped_value = Vec::with_capacity(n);
    let mut clipped = 0usize;
    for (&r, &a) in ratios.iter().zip(&batch.advantages) {
        let is_clipped = (r > hi && a > 0.0) || (r < lo && a < 0.0);
        clipped += is_clipped as usize;
        active.push(if is_clipped { 0.0 } else { 1.0 });
        clipped_value.push(if is_clipped { r.clamp(lo, hi) * a } else { 0.0 });
    }
    let adv = nn::from_rows(&batch.advantages, &[n], dtype)?;
    let active = nn::from_rows(&active, &[n], dtype)?;
    let clipped_value = nn::from_rows(&clipped_value, &[n], dtype)?;
    let surrogate = ((ratio * adv)? * active)?.add(&clipped_value)?.mean_all()?;

    let probs = logp_all.exp()?;
    let entropy = (&probs * &logp_all)?.sum(1)?.neg()?.mean_all()?;

    let targets = nn::from_rows(
        &symlog_two_hot_rows(&batch.value_targets, agent.buckets()),
        &[n, agent.buckets().count()],
        dtype,
    )?;
    let value_logp = nn::log_softmax(&agent.critic_logits(&features)?)?;
    let value = (targets * value_logp)?.sum(1)?.neg()?.mean_all()?;

    let total = ((surrogate.neg()? + (&value * cfg.value_coef)?)? - (&entropy * cfg.entropy_coef)?)?;
    Ok(PpoTerms {
        surrogate,
        value,
        entropy,
        total,
        clip_fraction: clipped as f64 / n as f64,
        ratios,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub steps: usize,
    /// Clip fraction of each gradient step, in order.
    pub clip_trace: Vec<f64>,
}

/// Runs `cfg.iterations` passes over the batch in shuffled minibatches.
pub fn ppo_update(
    agent: &Agent,
    opt: &mut Adam,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    rng: &mut StreamRng,
) -> Result<PpoReport> {
    batch.validate()?;
    let n = batch.len();
    let mb = cfg.minibatch.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = PpoReport::default();
    for _ in 0..cfg.iterations {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let sub = batch.subset(chunk)?;
            let terms = ppo_loss(agent, &sub, cfg)?;
            let grads = terms.total.backward()?;
            let stats = opt.step(agent.params(), &grads)?;
            report.policy_loss += -nn::scalar(&terms.surrogate)?;
            report.value_loss += nn::scalar(&terms.value)?;
            report.entropy += nn::scalar(&terms.entropy)?;
            report.clip_fraction += terms.clip_fraction;
            report.grad_norm += stats.grad_norm;
            report.clip_trace.push(terms.clip_fraction);
            report.steps += 1;
        }
    }
    let s = report.steps.max(1) as f64;
    report.policy_loss /= s;
    report.value_loss /= s;
    report.entropy /= s;
    report.clip_fraction /= s;
    report.grad_norm /= s;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::rng::stream_rng;
    use candle_core::Device;
    use rand::Rng;

    fn agent(dtype: DType, features: usize, seed: u64) -> Agent {
        let cfg = AgentConfig {
            features,
            actions: 4,
            units: 16,
            mlp_layers: 2,
            bins: 255,
            bins_lo: -20.0,
            bins_hi: 20.0,
        };
        Agent::new(cfg, dtype, &mut stream_rng(seed, "agent", 0)).unwrap()
    }

    fn features(n: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, "feat", 0);
        let data: Vec<f64> = (0..n * f).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(data, (n, f), &Device::Cpu).unwrap()
    }

    /// Independent double-sum form of the advantage estimator.
    fn gae_oracle(r: &[f64], v: &[f64], c: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let t = r.len();
        (0..t)
            .map(|s| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for i in s..t {
                    let delta = r[i] + gamma * c[i] * v[i + 1] - v[i];
                    total += weight * delta;
                    weight *= gamma * lambda * c[i];
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_examples() {
        assert_eq!(gae(&[1.0], &[0.0, 0.0], &[1.0], 0.7, 0.3).unwrap(), vec![1.0]);
        let adv = gae(&[0.0; 6], &[2.5; 7], &[1.0; 6], 1.0, 0.95).unwrap();
        assert!(adv.iter().all(|a| a.abs() < 1e-12));
        assert!(matches!(gae(&[0.0; 3], &[0.0; 3], &[1.0; 3], 0.9, 0.9), Err(Error::Shape(_))));
    }

    #[test]
    fn gae_matches_double_sum() {
        let mut rng = stream_rng(5, "gae", 0);
        for _ in 0..200 {
            let t = rng.random_range(1..=10);
            let r: Vec<f64> = (0..t).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let v: Vec<f64> = (0..=t).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let c: Vec<f64> = (0..t).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { 1.0 }).collect();
            let (g, l) = (rng.random::<f64>(), rng.random::<f64>());
            let fast = gae(&r, &v, &c, g, l).unwrap();
            for (a, b) in fast.iter().zip(gae_oracle(&r, &v, &c, g, l)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn termination_stops_bootstrapping() {
        // Terminal after the first step: advantage of step 0 ignores later values.
        let adv = gae(&[1.0, 5.0], &[0.0, 100.0, 100.0], &[0.0, 1.0], 0.9, 0.9).unwrap();
        assert_eq!(adv[0], 1.0);
    }

    #[test]
    fn normalization_floor_and_scaling() {
        let mut st = AdvNormState::default();
        let adv = [-0.3, 0.1, 0.3, 0.0];
        assert_eq!(normalize_advantages(&adv, &mut st).unwrap(), adv.to_vec());

        let mut st = AdvNormState { ema_range: 4.0, decay: 1.0 };
        let out = normalize_advantages(&[8.0, -4.0, 2.0], &mut st).unwrap();
        assert_eq!(out, vec![2.0, -1.0, 0.5]);
        assert!(normalize_advantages(&[], &mut st).is_err());
    }

    #[test]
    fn percentile_range_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let mut st = AdvNormState { ema_range: 0.0, decay: 0.0 };
        normalize_advantages(&values, &mut st).unwrap();
        // Order-statistics oracle: positions 0.05*99 = 4.95 and 0.95*99 = 94.05.
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p5 = sorted[4] + 0.95 * (sorted[5] - sorted[4]);
        let p95 = sorted[94] + 0.05 * (sorted[95] - sorted[94]);
        assert!((st.ema_range - (p95 - p5)).abs() < 1e-12);
        assert!((st.ema_range - 89.1).abs() < 1e-9);
    }

    #[test]
    fn fresh_policy_is_near_uniform() {
        let a = agent(DType::F32, 12, 0);
        let out = a.policy_forward(&features(64, 12, 1).to_dtype(DType::F32).unwrap(), &mut stream_rng(0, "p", 0)).unwrap();
        for (probs, h) in out.action_probs.iter().zip(&out.entropy) {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((h - 4f64.ln()).abs() < 0.1 * 4f64.ln());
        }
        for ((probs, a), lp) in out.action_probs.iter().zip(&out.sampled_actions).zip(&out.log_probs) {
            assert!((probs[*a].ln() - lp).abs() < 1e-5);
        }
        let again = a.policy_forward(&features(64, 12, 1).to_dtype(DType::F32).unwrap(), &mut stream_rng(0, "p", 0)).unwrap();
        assert_eq!(out.sampled_actions, again.sampled_actions);
    }

    #[test]
    fn fresh_critic_predicts_zero() {
        let a = agent(DType::F64, 12, 0);
        let c = a.critic_forward(&features(8, 12, 2)).unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 1e-5 && v.is_finite()));
        assert!(matches!(a.critic_forward(&features(8, 11, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn clip_arithmetic() {
        let a = agent(DType::F64, 6, 3);
        let feats = features(3, 6, 4);
        let logp = nn::to_vec2(&a.policy_log_probs(&feats).unwrap()).unwrap();
        let actions = vec![0, 1, 2];
        let cur: Vec<f64> = actions.iter().enumerate().map(|(i, &k)| logp[i][k]).collect();
        // ratio 1 everywhere: L_CLIP = mean(A).
        let adv = vec![1.0, -2.0, 0.5];
        let batch = PpoBatch {
            features: feats.clone(),
            actions: actions.clone(),
            old_log_probs: Some(cur.clone()),
            advantages: adv.clone(),
            value_targets: vec![0.0; 3],
        };
        let terms = ppo_loss(&a, &batch, &PpoConfig::default()).unwrap();
        assert!((nn::scalar(&terms.surrogate).unwrap() - (-0.5 / 3.0)).abs() < 1e-12);
        assert_eq!(terms.clip_fraction, 0.0);

        // ratio 1.5 with positive advantage: objective 1.2 * A.
        let old: Vec<f64> = cur.iter().map(|l| l - 1.5f64.ln()).collect();
        let batch = PpoBatch {
            old_log_probs: Some(old),
            advantages: vec![2.0; 3],
            ..batch
        };
        let terms = ppo_loss(&a, &batch, &PpoConfig::default()).unwrap();
        assert!((nn::scalar(&terms.surrogate).unwrap() - 2.4).abs() < 1e-9);
        assert_eq!(terms.clip_fraction, 1.0);
    }

    #[test]
    fn clipped_samples_have_zero_policy_gradient() {
        let a = agent(DType::F64, 6, 3);
        let feats = features(4, 6, 4);
        let logp = nn::to_vec2(&a.policy_log_probs(&feats).unwrap()).unwrap();
        let cur: Vec<f64> = (0..4).map(|i| logp[i][i % 4]).collect();
        // ratio 2 with A > 0 and ratio 0.5 with A < 0: both clipped.
        let old = vec![cur[0] - 2f64.ln(), cur[1] + 2f64.ln(), cur[2] - 2f64.ln(), cur[3] + 2f64.ln()];
        let batch = PpoBatch {
            features: feats,
            actions: vec![0, 1, 2, 3],
            old_log_probs: Some(old),
            advantages: vec![1.0, -1.0, 3.0, -0.5],
            value_targets: vec![0.0; 4],
        };
        let cfg = PpoConfig { entropy_coef: 0.0, value_coef: 0.0, ..PpoConfig::default() };
        let terms = ppo_loss(&a, &batch, &cfg).unwrap();
        assert_eq!(terms.clip_fraction, 1.0);
        let grads = terms.total.backward().unwrap();
        for (name, var) in a.params().iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                let m = nn::scalar(&g.abs().unwrap().max_all().unwrap()).unwrap();
                assert_eq!(m, 0.0, "{name}");
            }
        }
    }

    #[test]
    fn value_targets_are_constants() {
        let a = agent(DType::F64, 6, 3);
        let feats = features(5, 6, 4);
        let batch = PpoBatch {
            features: feats,
            actions: vec![0; 5],
            old_log_probs: Some(vec![-(4f64).ln(); 5]),
            advantages: vec![0.0; 5],
            value_targets: vec![3.0, -1.0, 0.5, 10.0, 0.0],
        };
        let cfg = PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() };
        let terms = ppo_loss(&a, &batch, &cfg).unwrap();
        let grads = terms.value.backward().unwrap();
        for (name, var) in a.params().iter() {
            let g = grads.get(var.as_tensor());
            if name.starts_with("actor") {
                let zero = g.map_or(true, |g| nn::scalar(&g.abs().unwrap().max_all().unwrap()).unwrap() == 0.0);
                assert!(zero, "{name} received critic-loss gradient");
            }
        }
    }

    #[test]
    fn missing_behavior_log_probs_is_a_contract_error() {
        let a = agent(DType::F64, 6, 3);
        let batch = PpoBatch {
            features: features(2, 6, 4),
            actions: vec![0, 1],
            old_log_probs: None,
            advantages: vec![0.0; 2],
            value_targets: vec![0.0; 2],
        };
        let mut opt = Adam::new(AdamConfig::new(1e-4, 0.5), a.params()).unwrap();
        assert!(matches!(
            ppo_update(&a, &mut opt, &batch, &PpoConfig::default(), &mut stream_rng(0, "x", 0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn critic_fits_a_constant_return() {
        let a = agent(DType::F32, 6, 8);
        let feats = features(32, 6, 9).to_dtype(DType::F32).unwrap();
        let mut opt = Adam::new(AdamConfig::new(5e-3, 100.0), a.params()).unwrap();
        let batch = PpoBatch {
            features: feats.clone(),
            actions: vec![0; 32],
            old_log_probs: Some(vec![0.0; 32]),
            advantages: vec![0.0; 32],
            value_targets: vec![5.0; 32],
        };
        let cfg = PpoConfig { iterations: 150, minibatch: 32, ..PpoConfig::default() };
        ppo_update(&a, &mut opt, &batch, &cfg, &mut stream_rng(0, "x", 0)).unwrap();
        for v in a.values(&feats).unwrap() {
            assert!((v - 5.0).abs() < 0.25, "{v}");
        }
    }
}
