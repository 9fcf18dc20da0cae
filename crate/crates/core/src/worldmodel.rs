//! Discrete-latent recurrent world model: recurrent core, image encoder,
//! transition prior, reward/continue heads and image decoder, plus the
//! representation-learning loss with KL balancing and free bits.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encodings::{symexp_raw, symlog_two_hot_rows, BucketSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvTranspose2d, Dense, GruCell, Init, Linear, Mlp, Params};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub hidden: usize,
    pub categoricals: usize,
    pub classes: usize,
    pub units: usize,
    pub mlp_layers: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    pub kernel: usize,
    pub image_size: usize,
    pub channels: usize,
    pub actions: usize,
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

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            categoricals: 32,
            classes: 32,
            units: 512,
            mlp_layers: 2,
            encoder_filters: vec![32, 64, 128, 256],
            decoder_filters: vec![128, 64, 32, 3],
            kernel: 4,
            image_size: 64,
            channels: 3,
            actions: 5,
            bins: 255,
            bins_lo: -20.0,
            bins_hi: 20.0,
            unimix: 0.01,
            unimix_posterior: true,
            unimix_prior: true,
            free_nats: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
        }
    }
}

impl WorldModelConfig {
    pub fn latent_size(&self) -> usize {
        self.categoricals * self.classes
    }

    /// Width of the concatenated `(h, flat z)` feature vector.
    pub fn feature_size(&self) -> usize {
        self.hidden + self.latent_size()
    }

    /// Spatial size of the last encoder feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.encoder_filters.len()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    pub fn bucket_spec(&self) -> Result<BucketSpec> {
        BucketSpec::new(self.bins, self.bins_lo, self.bins_hi)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("hidden", self.hidden),
            ("categoricals", self.categoricals),
            ("units", self.units),
            ("kernel", self.kernel),
            ("actions", self.actions),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if self.classes < 2 {
            errs.push("classes must be at least 2".into());
        }
        if self.bins < 2 {
            errs.push("bins must be at least 2".into());
        }
        if self.bins_lo >= self.bins_hi {
            errs.push("bins_lo must be below bins_hi".into());
        }
        if self.encoder_filters.is_empty() {
            errs.push("encoder_filters must not be empty".into());
        }
        if self.decoder_filters.len() != self.encoder_filters.len() {
            errs.push("decoder_filters must mirror encoder_filters in length".into());
        } else if self.decoder_filters.last() != Some(&self.channels) {
            errs.push("the last decoder filter count must equal the image channel count".into());
        }
        let n = self.encoder_filters.len() as u32;
        if self.image_size == 0 || self.image_size % 2usize.pow(n) != 0 {
            errs.push(format!(
                "image_size {} must be divisible by 2^{n}",
                self.image_size
            ));
        }
        if !(0.0..1.0).contains(&self.unimix) {
            errs.push("unimix must lie in [0, 1)".into());
        }
        if self.free_nats < 0.0 {
            errs.push("free_nats must be non-negative".into());
        }
        if self.beta_dyn < 0.0 || self.beta_rep < 0.0 {
            errs.push("KL loss factors must be non-negative".into());
        }
        errs
    }
}

/// Batch of latent states: `h` is `[B, hidden]`, `z` is `[B, C*J]` with one
/// one-hot row per categorical.
#[derive(Debug, Clone)]
pub struct Latent {
    pub h: Tensor,
    pub z: Tensor,
}

impl Latent {
    pub fn batch(&self) -> usize {
        self.h.dims()[0]
    }

    /// `(h, z)` concatenated along features.
    pub fn features(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.h, &self.z], 1)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            h: self.h.detach(),
            z: self.z.detach(),
        }
    }

    /// Checks that every categorical row of `z` is exactly one-hot and `h` is finite.
    pub fn validate(&self, classes: usize) -> Result<()> {
        check_one_hot(&self.z, classes)?;
        let h = nn::to_vec2(&self.h)?;
        if h.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite recurrent state".into()));
        }
        Ok(())
    }

    pub fn select(&self, rows: &[u32]) -> Result<Self> {
        let idx = Tensor::from_slice(rows, rows.len(), self.h.device())?;
        Ok(Self {
            h: self.h.index_select(&idx, 0)?,
            z: self.z.index_select(&idx, 0)?,
        })
    }

    pub fn cat(parts: &[&Latent]) -> Result<Self> {
        let hs: Vec<&Tensor> = parts.iter().map(|p| &p.h).collect();
        let zs: Vec<&Tensor> = parts.iter().map(|p| &p.z).collect();
        Ok(Self {
            h: Tensor::cat(&hs, 0)?,
            z: Tensor::cat(&zs, 0)?,
        })
    }

    /// Class index of every categorical, `[B][C]`.
    pub fn classes(&self, classes: usize) -> Result<Vec<Vec<usize>>> {
        let z = nn::to_vec2(&self.z)?;
        Ok(z.iter()
            .map(|row| {
                row.chunks(classes)
                    .map(|c| c.iter().position(|&x| x == 1.0).unwrap_or(0))
                    .collect()
            })
            .collect())
    }
}

pub fn check_one_hot(z: &Tensor, classes: usize) -> Result<()> {
    for (b, row) in nn::to_vec2(z)?.iter().enumerate() {
        for (c, cat) in row.chunks(classes).enumerate() {
            let ones = cat.iter().filter(|&&x| x == 1.0).count();
            let zeros = cat.iter().filter(|&&x| x == 0.0).count();
            if ones != 1 || ones + zeros != classes {
                return Err(Error::Domain(format!(
                    "latent row {b}, categorical {c} is not one-hot"
                )));
            }
        }
    }
    Ok(())
}

/// One-hot rows `[B, C*J]` from class indices `[B][C]`.
pub fn one_hot_latent(indices: &[Vec<usize>], classes: usize, dtype: DType) -> Result<Tensor> {
    let b = indices.len();
    let c = indices.first().map_or(0, Vec::len);
    let mut data = vec![0.0f64; b * c * classes];
    for (i, row) in indices.iter().enumerate() {
        for (j, &k) in row.iter().enumerate() {
            data[(i * c + j) * classes + k] = 1.0;
        }
    }
    nn::from_rows(&data, &[b, c * classes], dtype)
}

/// One-hot action rows `[B, A]`.
pub fn one_hot_actions(actions: &[usize], count: usize, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0.0f64; actions.len() * count];
    for (i, &a) in actions.iter().enumerate() {
        if a >= count {
            return Err(Error::Shape(format!("action {a} out of range for {count} actions")));
        }
        data[i * count + a] = 1.0;
    }
    nn::from_rows(&data, &[actions.len(), count], dtype)
}

/// Categorical distributions over `C` variables with `J` classes each.
#[derive(Debug, Clone)]
pub struct Categorical {
    /// `[B, C, J]`
    pub probs: Tensor,
    /// `[B, C, J]`
    pub log_probs: Tensor,
}

impl Categorical {
    fn from_logits(logits: &Tensor, c: usize, j: usize, unimix: f64) -> Result<Self> {
        let b = logits.dims()[0];
        let logits = logits.reshape((b, c, j))?;
        let mut probs = nn::softmax(&logits)?;
        if unimix > 0.0 {
            probs = probs.affine(1.0 - unimix, unimix / j as f64)?;
        }
        let log_probs = probs.log()?;
        Ok(Self { probs, log_probs })
    }

    pub fn detach(&self) -> Self {
        Self {
            probs: self.probs.detach(),
            log_probs: self.log_probs.detach(),
        }
    }

    /// Flattened `[B, C*J]` probabilities.
    pub fn flat_probs(&self) -> Result<Tensor> {
        Ok(self.probs.flatten_from(1)?)
    }

    /// Draws one class per categorical and returns the one-hot rows `[B, C*J]`
    /// as a constant tensor.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<Tensor> {
        let (b, c, j) = self.probs.dims3()?;
        let probs = self.probs.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut out = vec![0.0f64; b * c * j];
        for (row, dst) in probs.chunks(j).zip(out.chunks_mut(j)) {
            dst[sample_index(row, rng)] = 1.0;
        }
        nn::from_rows(&out, &[b, c * j], self.probs.dtype())
    }

    /// Per-sample KL(self ‖ other) summed over categoricals, shape `[B]`.
    pub fn kl(&self, other: &Categorical) -> Result<Tensor> {
        let diff = (&self.log_probs - &other.log_probs)?;
        Ok((&self.probs * diff)?.flatten_from(1)?.sum(1)?)
    }
}

/// Inverse-CDF draw from an (approximately) normalized probability row.
pub(crate) fn sample_index(probs: &[f64], rng: &mut StreamRng) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Straight-through latent: forward value `sample`, gradient of `probs`.
pub fn straight_through(sample: &Tensor, probs: &Tensor, anchor: &Tensor) -> Result<Tensor> {
    Ok((sample + (probs - anchor)?)?)
}

/// How the posterior latents are drawn inside [`WorldModel::loss`].
pub enum LatentSampling<'a> {
    Draw(&'a mut StreamRng),
    /// Draw and record samples plus the probabilities they were drawn from.
    Record(&'a mut StreamRng, &'a mut SampleTape),
    /// Reuse recorded samples; the straight-through anchor is the recorded
    /// probabilities, so the loss becomes a smooth function of the parameters
    /// whose gradient equals the straight-through gradient at the recording point.
    Replay(&'a SampleTape),
}

#[derive(Debug, Default, Clone)]
pub struct SampleTape {
    samples: Vec<Tensor>,
    anchors: Vec<Tensor>,
}

/// Sequence windows for world-model training. Arrays are time-major within
/// each window: index `b * len + t`.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub batch: usize,
    pub len: usize,
    /// `[B*L, C, S, S]` pixels in `[0, 1]`.
    pub observations: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub continues: Vec<f64>,
    /// Behavior-policy log-probabilities of `actions`.
    pub log_probs: Vec<f64>,
}

impl SequenceBatch {
    pub fn at(&self, b: usize, t: usize) -> usize {
        b * self.len + t
    }
}

/// Differentiable loss terms, each averaged over batch and time.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub image: Tensor,
    pub reward: Tensor,
    pub cont: Tensor,
    pub dyn_kl: Tensor,
    pub rep_kl: Tensor,
    pub total: Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldModelLossReport {
    pub pred_image: f64,
    pub pred_reward: f64,
    pub pred_continue: f64,
    pub dyn_kl: f64,
    pub rep_kl: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn report(&self) -> Result<WorldModelLossReport> {
        Ok(WorldModelLossReport {
            pred_image: nn::scalar(&self.image)?,
            pred_reward: nn::scalar(&self.reward)?,
            pred_continue: nn::scalar(&self.cont)?,
            dyn_kl: nn::scalar(&self.dyn_kl)?,
            rep_kl: nn::scalar(&self.rep_kl)?,
            total: nn::scalar(&self.total)?,
        })
    }
}

pub struct WorldModel {
    cfg: WorldModelConfig,
    buckets: BucketSpec,
    params: Params,
    recurrent_in: Dense,
    gru: GruCell,
    encoder_convs: Vec<Conv2d>,
    encoder_head: Mlp,
    prior_head: Mlp,
    reward_head: Mlp,
    continue_head: Mlp,
    decoder_in: Linear,
    decoder_convs: Vec<ConvTranspose2d>,
}

impl std::fmt::Debug for WorldModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorldModel")
            .field("cfg", &self.cfg)
            .field("params", &self.params)
            .finish()
    }
}

/// Parameter-name prefixes of each component.
pub mod component {
    pub const RECURRENT: &str = "recurrent";
    pub const ENCODER: &str = "encoder";
    pub const TRANSITION: &str = "transition";
    pub const REWARD: &str = "reward";
    pub const CONTINUE: &str = "continue";
    pub const DECODER: &str = "decoder";
}

impl WorldModel {
    pub fn new(cfg: WorldModelConfig, dtype: DType, rng: &mut StreamRng) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::ConfigList(errs));
        }
        let buckets = cfg.bucket_spec()?;
        let mut params = Params::new(dtype);
        let mut init = Init::new(&mut params, rng);
        let latent = cfg.latent_size();
        let feat = cfg.feature_size();

        let mut rec = init.sub(component::RECURRENT);
        let recurrent_in = Dense::new(&mut rec.sub("in"), latent + cfg.actions, cfg.units)?;
        let gru = GruCell::new(&mut rec.sub("gru"), cfg.units, cfg.hidden)?;

        let mut enc = init.sub(component::ENCODER);
        let mut encoder_convs = Vec::new();
        let mut ch = cfg.channels;
        for (i, &f) in cfg.encoder_filters.iter().enumerate() {
            encoder_convs.push(Conv2d::new(&mut enc.sub(&format!("conv{i}")), ch, f, cfg.kernel)?);
            ch = f;
        }
        let flat = ch * cfg.bottleneck_size() * cfg.bottleneck_size();
        let encoder_head = Mlp::new(
            &mut enc.sub("head"),
            flat + cfg.hidden,
            cfg.units,
            cfg.mlp_layers,
            Some((latent, 1.0)),
        )?;

        let prior_head = Mlp::new(
            &mut init.sub(component::TRANSITION),
            cfg.hidden,
            cfg.units,
            cfg.mlp_layers,
            Some((latent, 1.0)),
        )?;
        let reward_head = Mlp::new(
            &mut init.sub(component::REWARD),
            feat,
            cfg.units,
            cfg.mlp_layers,
            Some((cfg.bins, 0.0)),
        )?;
        let continue_head = Mlp::new(
            &mut init.sub(component::CONTINUE),
            feat,
            cfg.units,
            cfg.mlp_layers,
            Some((1, 1.0)),
        )?;

        let mut dec = init.sub(component::DECODER);
        let base = cfg.bottleneck_size();
        let top = *cfg.encoder_filters.last().expect("validated non-empty");
        let decoder_in = Linear::new(&mut dec.sub("in"), feat, top * base * base, 1.0)?;
        let mut decoder_convs = Vec::new();
        let mut ch = top;
        for (i, &f) in cfg.decoder_filters.iter().enumerate() {
            decoder_convs.push(ConvTranspose2d::new(
                &mut dec.sub(&format!("deconv{i}")),
                ch,
                f,
                cfg.kernel,
            )?);
            ch = f;
        }

        Ok(Self {
            cfg,
            buckets,
            params,
            recurrent_in,
            gru,
            encoder_convs,
            encoder_head,
            prior_head,
            reward_head,
            continue_head,
            decoder_in,
            decoder_convs,
        })
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn buckets(&self) -> &BucketSpec {
        &self.buckets
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn zeros_hidden(&self, batch: usize) -> Result<Tensor> {
        Ok(Tensor::zeros((batch, self.cfg.hidden), self.dtype(), &Device::Cpu)?)
    }

    pub fn zeros_latent(&self, batch: usize) -> Result<Tensor> {
        Ok(Tensor::zeros((batch, self.cfg.latent_size()), self.dtype(), &Device::Cpu)?)
    }

    pub fn zeros_action(&self, batch: usize) -> Result<Tensor> {
        Ok(Tensor::zeros((batch, self.cfg.actions), self.dtype(), &Device::Cpu)?)
    }

    /// `h' = f(h, z, a)`. `action` is a `[B, A]` one-hot (or zero) matrix.
    pub fn recurrent_step(&self, prev: &Latent, action: &Tensor) -> Result<Tensor> {
        let (b, a) = action.dims2()?;
        if a != self.cfg.actions || b != prev.batch() {
            return Err(Error::Shape(format!(
                "action batch is [{b}, {a}], expected [{}, {}]",
                prev.batch(),
                self.cfg.actions
            )));
        }
        let x = Tensor::cat(&[&prev.z, action], 1)?;
        let x = self.recurrent_in.forward(&x)?;
        self.gru.forward(&x, &prev.h)
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let s = self.cfg.image_size;
        match images.dims() {
            [_, c, h, w] if *c == self.cfg.channels && *h == s && *w == s => Ok(()),
            other => Err(Error::Shape(format!(
                "expected images [B, {}, {s}, {s}], got {other:?}",
                self.cfg.channels
            ))),
        }
    }

    /// Activation of the last encoder convolution layer, `[B, F, s, s]`.
    pub fn conv_features(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        let mut x = images.clone();
        for conv in &self.encoder_convs {
            x = nn::swish(&conv.forward(&x)?)?;
        }
        Ok(x)
    }

    fn posterior_from_features(&self, h: &Tensor, conv: &Tensor) -> Result<Categorical> {
        let x = Tensor::cat(&[&conv.flatten_from(1)?, h], 1)?;
        let logits = self.encoder_head.forward(&x)?;
        let mix = if self.cfg.unimix_posterior { self.cfg.unimix } else { 0.0 };
        Categorical::from_logits(&logits, self.cfg.categoricals, self.cfg.classes, mix)
    }

    /// Posterior `q(z | h, o)` for images `[B, C, S, S]` in `[0, 1]`.
    pub fn posterior(&self, h: &Tensor, images: &Tensor) -> Result<Categorical> {
        let conv = self.conv_features(images)?;
        self.posterior_from_features(h, &conv)
    }

    /// Encoder: posterior and a one-hot sample from it.
    pub fn encode(
        &self,
        h: &Tensor,
        images: &Tensor,
        rng: &mut StreamRng,
    ) -> Result<(Categorical, Tensor)> {
        let post = self.posterior(h, images)?;
        let z = post.sample(rng)?;
        Ok((post, z))
    }

    /// Transition prior `p(ẑ | h)`.
    pub fn prior(&self, h: &Tensor) -> Result<Categorical> {
        let logits = self.prior_head.forward(h)?;
        let mix = if self.cfg.unimix_prior { self.cfg.unimix } else { 0.0 };
        Categorical::from_logits(&logits, self.cfg.categoricals, self.cfg.classes, mix)
    }

    pub fn predict_transition(
        &self,
        h: &Tensor,
        rng: &mut StreamRng,
    ) -> Result<(Categorical, Tensor)> {
        let prior = self.prior(h)?;
        let z = prior.sample(rng)?;
        Ok((prior, z))
    }

    pub fn reward_logits(&self, features: &Tensor) -> Result<Tensor> {
        self.reward_head.forward(features)
    }

    /// Reward head: bucket softmax `[B, K]` and the decoded scalar rewards.
    pub fn predict_reward(&self, s: &Latent) -> Result<(Tensor, Vec<f64>)> {
        let probs = nn::softmax(&self.reward_logits(&s.features()?)?)?;
        let decoded = self.decode_buckets(&probs)?;
        Ok((probs, decoded))
    }

    /// `symexp(probs · centers)` row-wise.
    pub fn decode_buckets(&self, probs: &Tensor) -> Result<Vec<f64>> {
        decode_bucket_rows(probs, &self.buckets)
    }

    pub fn continue_logits(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.continue_head.forward(features)?.squeeze(1)?)
    }

    pub fn predict_continue(&self, s: &Latent) -> Result<Vec<f64>> {
        let p = nn::sigmoid(&self.continue_logits(&s.features()?)?)?;
        nn::to_vec1(&p)
    }

    pub fn decode_features(&self, features: &Tensor) -> Result<Tensor> {
        let b = features.dims()[0];
        let base = self.cfg.bottleneck_size();
        let top = *self.cfg.encoder_filters.last().expect("validated non-empty");
        let mut x = self.decoder_in.forward(features)?.reshape((b, top, base, base))?;
        for deconv in &self.decoder_convs {
            x = deconv.forward(&nn::swish(&x)?)?;
        }
        Ok(x)
    }

    /// Decoder mean image `[B, C, S, S]`.
    pub fn decode(&self, s: &Latent) -> Result<Tensor> {
        self.decode_features(&s.features()?)
    }

    /// Mean activation of the encoder's last convolution layer on the decoded
    /// image, one value per batch row. Differentiable w.r.t. `(h, z)`.
    pub fn dream_activation(&self, s: &Latent) -> Result<Tensor> {
        let image = self.decode(s)?;
        let act = self.conv_features(&image)?;
        Ok(act.flatten_from(1)?.mean(1)?)
    }

    /// Representation-learning loss over a batch of sequence windows.
    ///
    /// The recurrent state is reset at the start of every window. Reward and
    /// continue targets at step `t` are those stored with the transition
    /// `t - 1 -> t`. The sampled latent enters the recurrent core without
    /// gradient; downstream heads at the same step receive it through the
    /// straight-through estimator.
    pub fn loss(&self, batch: &SequenceBatch, mut sampling: LatentSampling) -> Result<LossTerms> {
        let (bsz, len) = (batch.batch, batch.len);
        if len < 2 {
            return Err(Error::Config(format!("sequence length must be at least 2, got {len}")));
        }
        let n = bsz * len;
        if batch.actions.len() != n || batch.rewards.len() != n || batch.continues.len() != n {
            return Err(Error::Shape("sequence batch arrays disagree with B*L".into()));
        }
        let dtype = self.dtype();
        let conv = self.conv_features(&batch.observations)?;
        let conv = conv.reshape((bsz, len, ()))?;

        let actions = one_hot_actions(&batch.actions, self.cfg.actions, dtype)?
            .reshape((bsz, len, self.cfg.actions))?;

        let mut h = self.zeros_hidden(bsz)?;
        let mut z_prev = self.zeros_latent(bsz)?;
        let mut feats = Vec::with_capacity(len);
        let mut dyn_terms = Vec::with_capacity(len);
        let mut rep_terms = Vec::with_capacity(len);

        for t in 0..len {
            if t > 0 {
                let a = actions.narrow(1, t - 1, 1)?.squeeze(1)?;
                let prev = Latent { h: h.clone(), z: z_prev.clone() };
                h = self.recurrent_step(&prev, &a)?;
            }
            let conv_t = conv.narrow(1, t, 1)?.squeeze(1)?;
            let post = self.posterior_from_features(&h, &conv_t)?;
            let prior = self.prior(&h)?;
            let probs = post.flat_probs()?;
            let (sample, anchor) = match &mut sampling {
                LatentSampling::Draw(rng) => (post.sample(rng)?, probs.detach()),
                LatentSampling::Record(rng, tape) => {
                    let s = post.sample(rng)?;
                    tape.samples.push(s.clone());
                    tape.anchors.push(probs.detach());
                    (s, probs.detach())
                }
                LatentSampling::Replay(tape) => {
                    let s = tape.samples.get(t).ok_or_else(|| {
                        Error::Contract("sample tape shorter than the sequence".into())
                    })?;
                    (s.clone(), tape.anchors[t].clone())
                }
            };
            let z = straight_through(&sample, &probs, &anchor)?;
            dyn_terms.push(post.detach().kl(&prior)?);
            rep_terms.push(post.kl(&prior.detach())?);
            feats.push(Tensor::cat(&[&h, &z], 1)?);
            z_prev = sample;
        }

        // [B, L, F] -> [B*L, F]
        let feats = Tensor::stack(&feats, 1)?.reshape((n, ()))?;
        let recon = self.decode_features(&feats)?;
        let image = (recon - &batch.observations)?.sqr()?.mean_all()?;

        // Reward / continue heads for t >= 1.
        let mut rows = Vec::with_capacity(bsz * (len - 1));
        let mut reward_targets = Vec::with_capacity(bsz * (len - 1));
        let mut cont_targets = Vec::with_capacity(bsz * (len - 1));
        for b in 0..bsz {
            for t in 1..len {
                rows.push(batch.at(b, t) as u32);
                reward_targets.push(batch.rewards[batch.at(b, t - 1)]);
                cont_targets.push(batch.continues[batch.at(b, t - 1)]);
            }
        }
        let idx = Tensor::from_slice(&rows, rows.len(), &Device::Cpu)?;
        let head_feats = feats.index_select(&idx, 0)?;
        let m = rows.len();
        let target = nn::from_rows(
            &symlog_two_hot_rows(&reward_targets, &self.buckets),
            &[m, self.cfg.bins],
            dtype,
        )?;
        let logp = nn::log_softmax(&self.reward_logits(&head_feats)?)?;
        let reward = (target * logp)?.sum(1)?.neg()?.mean_all()?;

        let logits = self.continue_logits(&head_feats)?;
        let y = nn::from_rows(&cont_targets, &[m], dtype)?;
        // BCE with logits: softplus(x) - y * x
        let cont = (nn::softplus(&logits)? - (y * &logits)?)?.mean_all()?;

        let dyn_kl = free_bits(&Tensor::stack(&dyn_terms, 1)?, self.cfg.free_nats)?.mean_all()?;
        let rep_kl = free_bits(&Tensor::stack(&rep_terms, 1)?, self.cfg.free_nats)?.mean_all()?;

        let total = ((&image + &reward)? + &cont)?;
        let total = ((total + (&dyn_kl * self.cfg.beta_dyn)?)? + (&rep_kl * self.cfg.beta_rep)?)?;
        Ok(LossTerms { image, reward, cont, dyn_kl, rep_kl, total })
    }

    /// Posterior latents along each window of `batch` (recurrent state reset at
    /// window start). Returns time-major `[B*L]` rows.
    pub fn filter(&self, batch: &SequenceBatch, rng: &mut StreamRng) -> Result<Latent> {
        let (bsz, len) = (batch.batch, batch.len);
        let conv = self.conv_features(&batch.observations)?.reshape((bsz, len, ()))?;
        let actions = one_hot_actions(&batch.actions, self.cfg.actions, self.dtype())?
            .reshape((bsz, len, self.cfg.actions))?;
        let mut state = Latent { h: self.zeros_hidden(bsz)?, z: self.zeros_latent(bsz)? };
        let mut hs = Vec::with_capacity(len);
        let mut zs = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 {
                let a = actions.narrow(1, t - 1, 1)?.squeeze(1)?;
                state.h = self.recurrent_step(&state, &a)?;
            }
            let post = self.posterior_from_features(&state.h, &conv.narrow(1, t, 1)?.squeeze(1)?)?;
            state.z = post.sample(rng)?;
            hs.push(state.h.clone());
            zs.push(state.z.clone());
        }
        Ok(Latent {
            h: Tensor::stack(&hs, 1)?.reshape((bsz * len, ()))?.detach(),
            z: Tensor::stack(&zs, 1)?.reshape((bsz * len, ()))?.detach(),
        })
    }
}

/// Clips each element below `floor` to the constant `floor`; clipped elements
/// carry no gradient.
pub fn free_bits(kl: &Tensor, floor: f64) -> Result<Tensor> {
    if floor <= 0.0 {
        return Ok(kl.clone());
    }
    let mask = kl.ge(floor)?.to_dtype(kl.dtype())?.detach();
    let keep = (&mask * kl)?;
    let fill = ((mask.ones_like()? - &mask)? * floor)?;
    Ok((keep + fill)?)
}

/// `symexp(probs · centers)` for each row of `probs` `[B, K]`.
pub fn decode_bucket_rows(probs: &Tensor, buckets: &BucketSpec) -> Result<Vec<f64>> {
    let rows = nn::to_vec2(probs)?;
    rows.iter()
        .map(|row| {
            if row.len() != buckets.count() {
                return Err(Error::Shape(format!(
                    "bucket row has {} entries, expected {}",
                    row.len(),
                    buckets.count()
                )));
            }
            let y: f64 = row.iter().zip(buckets.centers()).map(|(p, c)| p * c).sum();
            Ok(symexp_raw(y))
        })
        .collect()
}

/// Differentiable `symexp(probs · centers)`, shape `[B]`.
pub fn decode_bucket_tensor(probs: &Tensor, buckets: &BucketSpec) -> Result<Tensor> {
    let centers = nn::from_rows(buckets.centers(), &[buckets.count(), 1], probs.dtype())?;
    let y = probs.matmul(&centers)?.squeeze(1)?;
    // symexp(y) = sign(y) * (exp(|y|) - 1)
    let mag = (y.abs()?.exp()? - 1.0)?;
    Ok((y.sign()?.detach() * mag)?)
}

/// Converts `[N][S*S*C]` HWC bytes into an `[N, C, S, S]` tensor in `[0, 1]`.
pub fn images_to_tensor(
    frames: &[&[u8]],
    size: usize,
    channels: usize,
    dtype: DType,
) -> Result<Tensor> {
    let n = frames.len();
    let plane = size * size;
    let mut data = vec![0f32; n * channels * plane];
    for (i, frame) in frames.iter().enumerate() {
        if frame.len() != plane * channels {
            return Err(Error::Shape(format!(
                "frame has {} bytes, expected {}",
                frame.len(),
                plane * channels
            )));
        }
        let dst = &mut data[i * channels * plane..(i + 1) * channels * plane];
        for p in 0..plane {
            for c in 0..channels {
                dst[c * plane + p] = frame[p * channels + c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, (n, channels, size, size), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`images_to_tensor`] for a single `[C, S, S]` image; values are clamped to `[0, 1]`.
pub fn tensor_to_image(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    let data = image.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    let mut out = vec![0u8; plane * c];
    for p in 0..plane {
        for ch in 0..c {
            let v = data[ch * plane + p].clamp(0.0, 1.0);
            out[p * c + ch] = (v * 255.0).round() as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::stream_rng;

    pub(crate) fn tiny_config() -> WorldModelConfig {
        WorldModelConfig {
            hidden: 8,
            categoricals: 3,
            classes: 4,
            units: 8,
            mlp_layers: 1,
            encoder_filters: vec![2, 4],
            decoder_filters: vec![2, 3],
            image_size: 8,
            actions: 3,
            bins: 15,
            ..WorldModelConfig::default()
        }
    }

    fn model(dtype: DType) -> WorldModel {
        WorldModel::new(tiny_config(), dtype, &mut stream_rng(1, "init", 0)).unwrap()
    }

    fn random_latent(m: &WorldModel, b: usize, seed: u64) -> Latent {
        let cfg = m.config();
        let mut rng = stream_rng(seed, "test", 0);
        let idx: Vec<Vec<usize>> = (0..b)
            .map(|_| (0..cfg.categoricals).map(|_| rng.random_range(0..cfg.classes)).collect())
            .collect();
        let h: Vec<f64> = (0..b * cfg.hidden).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Latent {
            h: nn::from_rows(&h, &[b, cfg.hidden], m.dtype()).unwrap(),
            z: one_hot_latent(&idx, cfg.classes, m.dtype()).unwrap(),
        }
    }

    #[test]
    fn default_config_matches_published_sizes() {
        let cfg = WorldModelConfig::default();
        assert_eq!((cfg.categoricals, cfg.classes, cfg.hidden), (32, 32, 512));
        assert_eq!(cfg.encoder_filters, vec![32, 64, 128, 256]);
        assert_eq!(cfg.decoder_filters, vec![128, 64, 32, 3]);
        assert_eq!((cfg.bins, cfg.bins_lo, cfg.bins_hi), (255, -20.0, 20.0));
        assert_eq!((cfg.beta_dyn, cfg.beta_rep, cfg.free_nats), (0.5, 0.1, 1.0));
        assert_eq!(cfg.bottleneck_size(), 4);
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn recurrent_step_is_deterministic_and_shaped() -> Result<()> {
        let m = model(DType::F32);
        let s = random_latent(&m, 5, 3);
        let a = one_hot_actions(&[0, 1, 2, 0, 1], 3, DType::F32)?;
        let h1 = nn::to_vec2(&m.recurrent_step(&s, &a)?)?;
        let h2 = nn::to_vec2(&m.recurrent_step(&s, &a)?)?;
        assert_eq!(h1, h2);
        assert_eq!((h1.len(), h1[0].len()), (5, 8));
        let h0 = nn::to_vec2(&m.recurrent_step(&s, &m.zeros_action(5)?)?)?;
        assert!(h0.iter().flatten().all(|x| x.is_finite()));
        let bad = one_hot_actions(&[0, 1], 2, DType::F32)?;
        assert!(matches!(m.recurrent_step(&s, &bad), Err(Error::Shape(_))));
        Ok(())
    }

    #[test]
    fn posterior_and_prior_obey_the_uniform_floor() -> Result<()> {
        let m = model(DType::F64);
        let s = random_latent(&m, 4, 5);
        let img = Tensor::rand(0f64, 1.0, (4, 3, 8, 8), &Device::Cpu)?;
        let mut rng = stream_rng(0, "s", 0);
        let (post, z) = m.encode(&s.h, &img, &mut rng)?;
        let (prior, zp) = m.predict_transition(&s.h, &mut rng)?;
        check_one_hot(&z, 4)?;
        check_one_hot(&zp, 4)?;
        for cat in [&post, &prior] {
            let p = nn::to_vec2(&cat.flat_probs()?)?;
            for row in &p {
                for c in row.chunks(4) {
                    assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    assert!(c.iter().all(|&x| x >= 0.01 / 4.0 - 1e-12));
                }
            }
        }
        let again = nn::to_vec2(&m.prior(&s.h)?.flat_probs()?)?;
        assert_eq!(again, nn::to_vec2(&prior.flat_probs()?)?);
        let wrong = Tensor::zeros((4, 3, 16, 16), DType::F64, &Device::Cpu)?;
        assert!(matches!(m.posterior(&s.h, &wrong), Err(Error::Shape(_))));
        Ok(())
    }

    #[test]
    fn fresh_reward_head_predicts_zero() -> Result<()> {
        let m = model(DType::F64);
        let s = random_latent(&m, 3, 9);
        let (probs, r) = m.predict_reward(&s)?;
        for row in nn::to_vec2(&probs)? {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(r.iter().all(|x| x.abs() < 1e-5));
        let c = m.predict_continue(&s)?;
        assert!(c.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(m.decode(&s)?.dims(), &[3, 3, 8, 8]);
        Ok(())
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut rng = stream_rng(11, "freq", 0);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn free_bits_floor_and_mask() -> Result<()> {
        let kl = Tensor::new(&[0.0f64, 0.5, 1.5], &Device::Cpu)?;
        assert_eq!(nn::to_vec1(&free_bits(&kl, 1.0)?)?, vec![1.0, 1.0, 1.5]);
        Ok(())
    }

    #[test]
    fn bucket_tensor_decoding_matches_rows() -> Result<()> {
        let spec = BucketSpec::new(7, -3.0, 3.0)?;
        let p = nn::softmax(&Tensor::new(&[[0.1f64, 2.0, -1.0, 0.3, 0.0, 1.0, 3.0]], &Device::Cpu)?)?;
        let a = decode_bucket_rows(&p, &spec)?;
        let b = nn::to_vec1(&decode_bucket_tensor(&p, &spec)?)?;
        assert!((a[0] - b[0]).abs() < 1e-12);
        Ok(())
    }

    #[test]
    fn image_conversion_round_trips() -> Result<()> {
        let frame: Vec<u8> = (0..8 * 8 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let t = images_to_tensor(&[&frame], 8, 3, DType::F32)?;
        assert_eq!(tensor_to_image(&t.squeeze(0)?)?, frame);
        Ok(())
    }
}
