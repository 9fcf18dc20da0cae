//! Append-only episode storage and sequence-window sampling with optional
//! prioritization of windows that contain a non-zero reward.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{shape_reward, Environment, Frame, LevelMode, ShapingConfig, FRAME_LEN};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::worldmodel::{images_to_tensor, SequenceBatch};

/// A (possibly truncated) stretch of one episode.
///
/// `observations` holds `T + 1` frames; the other arrays hold `T` entries,
/// where entry `t` describes the transition from frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub observations: Vec<Frame>,
    pub actions: Vec<usize>,
    /// Shaped rewards.
    pub rewards: Vec<f64>,
    pub continues: Vec<bool>,
    /// Behavior-policy log-probabilities of `actions`.
    pub log_probs: Vec<f64>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, action_count: usize) -> Result<()> {
        let t = self.actions.len();
        if t == 0 {
            return Err(Error::Validation("episode has no transitions".into()));
        }
        if self.observations.len() != t + 1 {
            return Err(Error::Validation(format!(
                "{} observations for {t} transitions",
                self.observations.len()
            )));
        }
        if self.rewards.len() != t || self.continues.len() != t || self.log_probs.len() != t {
            return Err(Error::Validation("per-step arrays have inconsistent lengths".into()));
        }
        if self.observations.iter().any(|o| o.0.len() != FRAME_LEN) {
            return Err(Error::Validation("observation of the wrong size".into()));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= action_count) {
            return Err(Error::Validation(format!("action {a} out of range")));
        }
        if self.continues[..t - 1].iter().any(|c| !c) {
            return Err(Error::Validation("termination before the last step".into()));
        }
        if self.rewards.iter().chain(&self.log_probs).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite reward or log-probability".into()));
        }
        Ok(())
    }
}

/// One sampled window: `len` consecutive observations starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayDataset {
    episodes: Vec<Episode>,
    total_steps: usize,
    /// `(episode, step)` of every non-zero reward.
    nonzero_index: Vec<(usize, usize)>,
    capacity: Option<usize>,
    action_count: usize,
}

impl ReplayDataset {
    pub fn new(action_count: usize, capacity: Option<usize>) -> Self {
        Self {
            episodes: Vec::new(),
            total_steps: 0,
            nonzero_index: Vec::new(),
            capacity,
            action_count,
        }
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn nonzero_index(&self) -> &[(usize, usize)] {
        &self.nonzero_index
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn append(&mut self, episode: Episode) -> Result<()> {
        episode.validate(self.action_count)?;
        if let Some(capacity) = self.capacity {
            if self.total_steps + episode.len() > capacity {
                return Err(Error::Capacity {
                    stored: self.total_steps,
                    incoming: episode.len(),
                    capacity,
                });
            }
        }
        let e = self.episodes.len();
        self.nonzero_index.extend(
            episode
                .rewards
                .iter()
                .enumerate()
                .filter(|(_, r)| **r != 0.0)
                .map(|(t, _)| (e, t)),
        );
        self.total_steps += episode.len();
        self.episodes.push(episode);
        Ok(())
    }

    /// Number of windows of `len` observations in each episode.
    fn window_counts(&self, len: usize) -> Vec<usize> {
        self.episodes
            .iter()
            .map(|e| (e.len() + 2).saturating_sub(len))
            .collect()
    }

    /// Draws `batch` windows of `len` observations. With probability
    /// `priority` (per window) the window is drawn so that it covers a
    /// stored non-zero reward as a prediction target.
    pub fn sample_windows(
        &self,
        batch: usize,
        len: usize,
        priority: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<Window>> {
        if len < 1 {
            return Err(Error::Sampling("window length must be positive".into()));
        }
        let counts = self.window_counts(len);
        let cumulative: Vec<usize> = counts
            .iter()
            .scan(0, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        let total = cumulative.last().copied().unwrap_or(0);
        if total == 0 {
            return Err(Error::Sampling(format!(
                "no stored episode has {len} observations"
            )));
        }
        // Rewards that some window of this length can cover.
        let targets: Vec<(usize, usize)> = self
            .nonzero_index
            .iter()
            .copied()
            .filter(|&(e, _)| counts[e] > 0)
            .collect();
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            if !targets.is_empty() && priority > 0.0 && rng.random::<f64>() < priority {
                let (e, t) = targets[rng.random_range(0..targets.len())];
                // Window covers frames t and t+1: start in [t+2-len, t].
                let last_start = counts[e] - 1;
                let lo = (t + 2).saturating_sub(len).min(last_start);
                let hi = t.min(last_start);
                out.push(Window {
                    episode: e,
                    start: rng.random_range(lo..=hi),
                });
            } else {
                let k = rng.random_range(0..total);
                let e = cumulative.partition_point(|&c| c <= k);
                let before = if e == 0 { 0 } else { cumulative[e - 1] };
                out.push(Window {
                    episode: e,
                    start: k - before,
                });
            }
        }
        Ok(out)
    }

    /// Materializes windows into a [`SequenceBatch`]. Entries past the end of
    /// an episode (the final frame has no action) are zero-filled with a
    /// continue flag of 0.
    pub fn gather(&self, windows: &[Window], len: usize, dtype: DType) -> Result<SequenceBatch> {
        let n = windows.len() * len;
        let mut frames: Vec<&[u8]> = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut continues = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        for w in windows {
            let ep = self
                .episodes
                .get(w.episode)
                .ok_or_else(|| Error::Sampling(format!("no episode {}", w.episode)))?;
            if w.start + len > ep.observations.len() {
                return Err(Error::Sampling("window extends past the episode".into()));
            }
            for t in w.start..w.start + len {
                frames.push(ep.observations[t].bytes());
                if t < ep.len() {
                    actions.push(ep.actions[t]);
                    rewards.push(ep.rewards[t]);
                    continues.push(if ep.continues[t] { 1.0 } else { 0.0 });
                    log_probs.push(ep.log_probs[t]);
                } else {
                    actions.push(0);
                    rewards.push(0.0);
                    continues.push(0.0);
                    log_probs.push(0.0);
                }
            }
        }
        let observations = images_to_tensor(&frames, 64, 3, dtype)?;
        Ok(SequenceBatch {
            batch: windows.len(),
            len,
            observations,
            actions,
            rewards,
            continues,
            log_probs,
        })
    }

    pub fn sample_sequences(
        &self,
        batch: usize,
        len: usize,
        priority: f64,
        dtype: DType,
        rng: &mut StreamRng,
    ) -> Result<SequenceBatch> {
        let windows = self.sample_windows(batch, len, priority, rng)?;
        self.gather(&windows, len, dtype)
    }
}

/// Collects `episodes` full episodes with uniform-random actions on training
/// levels and stores them with shaped rewards.
pub fn seed(
    env: &mut dyn Environment,
    episodes: usize,
    shaping: &ShapingConfig,
    capacity: Option<usize>,
    level_rng: &mut StreamRng,
    action_rng: &mut StreamRng,
) -> Result<ReplayDataset> {
    if episodes < 1 {
        return Err(Error::Config("at least one seed episode is required".into()));
    }
    let spec = env.spec().clone();
    let mut ds = ReplayDataset::new(spec.action_count, capacity);
    let log_prob = -(spec.action_count as f64).ln();
    for _ in 0..episodes {
        let level = crate::envs::sample_level(&spec, LevelMode::Train, level_rng);
        let mut ep = Episode {
            observations: vec![env.reset(level)?],
            actions: Vec::new(),
            rewards: Vec::new(),
            continues: Vec::new(),
            log_probs: Vec::new(),
            success: false,
        };
        loop {
            let a = action_rng.random_range(0..spec.action_count);
            let out = env.step(a)?;
            ep.actions.push(a);
            ep.rewards.push(shape_reward(out.reward, out.cont, out.success, shaping));
            ep.continues.push(out.cont);
            ep.log_probs.push(log_prob);
            ep.observations.push(out.observation);
            if !out.cont {
                ep.success = out.success;
                break;
            }
        }
        ds.append(ep)?;
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// On-disk store

const EPISODE_MAGIC: &[u8; 4] = b"DNEP";
const EPISODE_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub file: String,
    pub steps: usize,
    pub success: bool,
    pub nonzero_rewards: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub version: u32,
    pub episodes: Vec<EpisodeMeta>,
}

/// One binary file per episode plus an `index.json` listing them.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    dir: PathBuf,
}

impl EpisodeStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read_index(&self) -> Result<StoreIndex> {
        let path = self.dir.join(INDEX_FILE);
        if !path.exists() {
            return Ok(StoreIndex {
                version: EPISODE_VERSION,
                episodes: Vec::new(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write_index(&self, index: &StoreIndex) -> Result<()> {
        let path = self.dir.join(INDEX_FILE);
        let tmp = self.dir.join("index.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(index)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Writes episodes `[stored, ds.len())` that are not yet on disk.
    pub fn sync(&self, ds: &ReplayDataset) -> Result<()> {
        let mut index = self.read_index()?;
        for (i, ep) in ds.episodes().iter().enumerate().skip(index.episodes.len()) {
            let file = format!("episode_{i:06}.bin");
            write_episode(&self.dir.join(&file), ep)?;
            index.episodes.push(EpisodeMeta {
                file,
                steps: ep.len(),
                success: ep.success,
                nonzero_rewards: ep.rewards.iter().filter(|r| **r != 0.0).count(),
                terminal: ep.continues.last() == Some(&false),
            });
        }
        index.version = EPISODE_VERSION;
        self.write_index(&index)
    }

    /// Loads the first `count` episodes (all when `None`).
    pub fn load(
        &self,
        action_count: usize,
        capacity: Option<usize>,
        count: Option<usize>,
    ) -> Result<ReplayDataset> {
        let index = self.read_index()?;
        let n = count.unwrap_or(index.episodes.len());
        if n > index.episodes.len() {
            return Err(Error::Checkpoint(format!(
                "episode store holds {} episodes, {n} requested",
                index.episodes.len()
            )));
        }
        let mut ds = ReplayDataset::new(action_count, capacity);
        for meta in &index.episodes[..n] {
            ds.append(read_episode(&self.dir.join(&meta.file))?)?;
        }
        Ok(ds)
    }

    /// Drops index entries (and files) beyond the first `count` episodes.
    pub fn truncate(&self, count: usize) -> Result<()> {
        let mut index = self.read_index()?;
        for meta in index.episodes.iter().skip(count) {
            let path = self.dir.join(&meta.file);
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        index.episodes.truncate(count);
        self.write_index(&index)
    }
}

fn write_episode(path: &Path, ep: &Episode) -> Result<()> {
    let t = ep.len();
    let mut buf = Vec::with_capacity(16 + (t + 1) * FRAME_LEN + t * 21);
    buf.extend_from_slice(EPISODE_MAGIC);
    buf.extend_from_slice(&EPISODE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(FRAME_LEN as u32).to_le_bytes());
    buf.push(ep.success as u8);
    for o in &ep.observations {
        buf.extend_from_slice(o.bytes());
    }
    for &a in &ep.actions {
        buf.extend_from_slice(&(a as u32).to_le_bytes());
    }
    for &r in &ep.rewards {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    buf.extend(ep.continues.iter().map(|&c| c as u8));
    for &l in &ep.log_probs {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_episode(path: &Path) -> Result<Episode> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated"))? != EPISODE_MAGIC {
        return Err(bad("not an episode file"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated"))?;
    if version != EPISODE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let t = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
    let frame_len = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
    if frame_len != FRAME_LEN {
        return Err(bad("unexpected frame size"));
    }
    let success = cur.take(1).ok_or_else(|| bad("truncated"))?[0] != 0;
    let mut observations = Vec::with_capacity(t + 1);
    for _ in 0..=t {
        observations.push(Frame(cur.take(frame_len).ok_or_else(|| bad("truncated"))?.to_vec()));
    }
    let actions = (0..t)
        .map(|_| cur.u32().map(|a| a as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("truncated"))?;
    let rewards = (0..t).map(|_| cur.f64()).collect::<Option<Vec<_>>>().ok_or_else(|| bad("truncated"))?;
    let continues = cur.take(t).ok_or_else(|| bad("truncated"))?.iter().map(|&c| c != 0).collect();
    let log_probs = (0..t).map(|_| cur.f64()).collect::<Option<Vec<_>>>().ok_or_else(|| bad("truncated"))?;
    Ok(Episode {
        observations,
        actions,
        rewards,
        continues,
        log_probs,
        success,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envs::{MazeConfig, MazeEnv};
    use crate::rng::stream_rng;

    pub(crate) fn synthetic_episode(len: usize, reward_at: Option<usize>) -> Episode {
        let mut rewards = vec![0.0; len];
        if let Some(t) = reward_at {
            rewards[t] = 10.0;
        }
        let mut continues = vec![true; len];
        continues[len - 1] = false;
        Episode {
            observations: (0..=len).map(|i| Frame(vec![i as u8; FRAME_LEN])).collect(),
            actions: (0..len).map(|i| i % 5).collect(),
            rewards,
            continues,
            log_probs: vec![-(5f64).ln(); len],
            success: reward_at.is_some(),
        }
    }

    /// Environment that terminates after a fixed number of steps.
    struct Countdown {
        spec: crate::envs::EnvSpec,
        left: usize,
        steps: usize,
    }

    impl Environment for Countdown {
        fn spec(&self) -> &crate::envs::EnvSpec {
            &self.spec
        }
        fn reset(&mut self, _: u64) -> Result<Frame> {
            self.left = self.steps;
            Ok(Frame(vec![0; FRAME_LEN]))
        }
        fn step(&mut self, _: usize) -> Result<crate::envs::StepOutcome> {
            self.left -= 1;
            Ok(crate::envs::StepOutcome {
                observation: Frame(vec![1; FRAME_LEN]),
                reward: 0.0,
                cont: self.left > 0,
                success: false,
            })
        }
    }

    fn countdown(steps: usize) -> Countdown {
        Countdown {
            spec: MazeEnv::new(MazeConfig::sparse(3), LevelMode::Train).unwrap().spec().clone(),
            left: steps,
            steps,
        }
    }

    #[test]
    fn seeding_collects_requested_episodes() {
        let mut env = MazeEnv::new(MazeConfig::sparse(20), LevelMode::Train).unwrap();
        let shaping = ShapingConfig::for_env("builtin-sparse");
        let ds = seed(
            &mut env,
            5,
            &shaping,
            None,
            &mut stream_rng(0, "l", 0),
            &mut stream_rng(0, "a", 0),
        )
        .unwrap();
        assert_eq!(ds.episodes().len(), 5);
        assert_eq!(ds.total_steps(), ds.episodes().iter().map(Episode::len).sum::<usize>());

        let mut env = countdown(3);
        let ds = seed(
            &mut env,
            1,
            &shaping,
            None,
            &mut stream_rng(0, "l", 0),
            &mut stream_rng(0, "a", 0),
        )
        .unwrap();
        assert_eq!(ds.total_steps(), 3);
    }

    #[test]
    fn seed_actions_are_uniform() {
        let mut env = countdown(100);
        let shaping = ShapingConfig::default();
        let ds = seed(
            &mut env,
            100,
            &shaping,
            None,
            &mut stream_rng(1, "l", 0),
            &mut stream_rng(1, "a", 0),
        )
        .unwrap();
        let mut counts = [0f64; 5];
        for ep in ds.episodes() {
            for &a in &ep.actions {
                counts[a] += 1.0;
            }
        }
        let n: f64 = counts.iter().sum();
        assert_eq!(n, 10_000.0);
        let expected = n / 5.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.47, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn append_tracks_steps_and_rewards() {
        let mut ds = ReplayDataset::new(5, None);
        ds.append(synthetic_episode(10, None)).unwrap();
        assert_eq!(ds.total_steps(), 10);
        assert!(ds.nonzero_index().is_empty());
        let first = ds.episodes()[0].clone();
        ds.append(synthetic_episode(4, Some(3))).unwrap();
        assert_eq!(ds.total_steps(), 14);
        assert_eq!(ds.nonzero_index(), &[(1, 3)]);
        assert_eq!(ds.episodes()[0], first);
    }

    #[test]
    fn malformed_episodes_are_rejected() {
        let mut ds = ReplayDataset::new(5, None);
        let mut ep = synthetic_episode(5, None);
        ep.continues[1] = false;
        assert!(matches!(ds.append(ep), Err(Error::Validation(_))));
        let mut ep = synthetic_episode(5, None);
        ep.observations.pop();
        assert!(matches!(ds.append(ep), Err(Error::Validation(_))));
        let mut ep = synthetic_episode(5, None);
        ep.actions[0] = 9;
        assert!(matches!(ds.append(ep), Err(Error::Validation(_))));
    }

    #[test]
    fn capacity_is_enforced() {
        let mut ds = ReplayDataset::new(5, Some(12));
        ds.append(synthetic_episode(10, None)).unwrap();
        assert!(matches!(
            ds.append(synthetic_episode(3, None)),
            Err(Error::Capacity { stored: 10, incoming: 3, capacity: 12 })
        ));
        assert_eq!(ds.total_steps(), 10);
    }

    #[test]
    fn batches_have_the_requested_shape() {
        let mut ds = ReplayDataset::new(5, None);
        for _ in 0..4 {
            ds.append(synthetic_episode(30, None)).unwrap();
        }
        let b = ds
            .sample_sequences(100, 25, 0.5, DType::F32, &mut stream_rng(0, "r", 0))
            .unwrap();
        assert_eq!((b.batch, b.len), (100, 25));
        assert_eq!(b.observations.dims(), &[2500, 3, 64, 64]);
        assert_eq!(b.actions.len(), 2500);
    }

    #[test]
    fn windows_stay_inside_episodes() {
        let mut ds = ReplayDataset::new(5, None);
        for len in [3, 7, 12, 40] {
            ds.append(synthetic_episode(len, Some(len - 1))).unwrap();
        }
        let mut rng = stream_rng(2, "r", 0);
        for w in ds.sample_windows(2000, 8, 0.5, &mut rng).unwrap() {
            let ep = &ds.episodes()[w.episode];
            assert!(w.start + 8 <= ep.observations.len());
        }
        assert!(matches!(
            ds.sample_windows(1, 42, 0.0, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut ds = ReplayDataset::new(5, None);
        for i in 0..5 {
            ds.append(synthetic_episode(20 + i, Some(i))).unwrap();
        }
        let a = ds.sample_windows(50, 6, 0.5, &mut stream_rng(9, "r", 0)).unwrap();
        let b = ds.sample_windows(50, 6, 0.5, &mut stream_rng(9, "r", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prioritized_window_frequency() {
        // One episode whose single window holds the only reward, plus many
        // reward-free episodes.
        let len = 6;
        let mut ds = ReplayDataset::new(5, None);
        ds.append(synthetic_episode(len - 1, Some(2))).unwrap();
        for _ in 0..20 {
            ds.append(synthetic_episode(30, None)).unwrap();
        }
        let windows_total: usize = ds.window_counts(len).iter().sum();
        let p = 0.5 + 0.5 / windows_total as f64;
        let n = 10_000;
        let hits = ds
            .sample_windows(n, len, 0.5, &mut stream_rng(4, "r", 0))
            .unwrap()
            .iter()
            .filter(|w| w.episode == 0)
            .count();
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - n as f64 * p).abs() < 3.0 * sigma, "hits = {hits}");

        let plain = ds
            .sample_windows(n, len, 0.0, &mut stream_rng(4, "r", 0))
            .unwrap()
            .iter()
            .filter(|w| w.episode == 0)
            .count();
        assert!(plain < n / 20);
    }

    #[test]
    fn store_round_trip_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let store = EpisodeStore::open(dir.path()).unwrap();
        let mut ds = ReplayDataset::new(5, None);
        ds.append(synthetic_episode(4, Some(1))).unwrap();
        store.sync(&ds).unwrap();
        ds.append(synthetic_episode(6, None)).unwrap();
        store.sync(&ds).unwrap();
        let back = store.load(5, None, None).unwrap();
        assert_eq!(back.episodes(), ds.episodes());
        assert_eq!(back.nonzero_index(), ds.nonzero_index());
        store.truncate(1).unwrap();
        let back = store.load(5, None, None).unwrap();
        assert_eq!(back.episodes().len(), 1);
        assert_eq!(store.read_index().unwrap().episodes[0].steps, 4);
    }
}
