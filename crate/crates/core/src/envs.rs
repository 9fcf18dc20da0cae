//! Environments: the reset/step interface, reward shaping, a built-in
//! procedurally generated maze with seeded level sets, and an adapter for
//! external environments that do not report task success.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const FRAME_SIZE: usize = 64;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_SIZE * FRAME_SIZE * FRAME_CHANNELS;

/// An RGB observation stored as `64 x 64 x 3` bytes (row-major, HWC).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame(pub Vec<u8>);

impl Frame {
    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    /// Pixels scaled to `[0, 1]`, HWC order.
    pub fn to_unit(&self) -> Vec<f32> {
        self.0.iter().map(|&b| b as f32 / 255.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub action_count: usize,
    pub observation_shape: [usize; 3],
    /// Number of levels in the training subset.
    pub train_level_count: u64,
    pub sparse: bool,
    pub max_steps: usize,
}

/// Which levels an environment instance may be reset to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelMode {
    /// Only seeds `0..train_level_count`.
    Train,
    /// The full level distribution.
    Test,
}

/// Draws level seeds for a mode.
pub fn sample_level(spec: &EnvSpec, mode: LevelMode, rng: &mut StreamRng) -> u64 {
    match mode {
        LevelMode::Train => rng.random_range(0..spec.train_level_count),
        LevelMode::Test => rng.random(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Frame,
    pub reward: f64,
    /// `false` exactly at termination.
    pub cont: bool,
    pub success: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, level_seed: u64) -> Result<Frame>;

    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    /// Added once, at a non-successful termination. Must be `<= 0`.
    pub failure_penalty: f64,
    pub reward_scale: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            failure_penalty: 0.0,
            reward_scale: 1.0,
        }
    }
}

impl ShapingConfig {
    /// Per-game shaping used for the published ProcGen runs.
    pub fn for_env(name: &str) -> Self {
        let game = name.strip_prefix("procgen:").unwrap_or(name);
        match game {
            "coinrun" | "caveflyer" | "builtin-sparse" => Self {
                failure_penalty: -10.0,
                reward_scale: 1.0,
            },
            "chaser" => Self {
                failure_penalty: 0.0,
                reward_scale: 25.0,
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.failure_penalty <= 0.0) {
            errs.push("failure_penalty must be <= 0".into());
        }
        if !(self.reward_scale > 0.0) {
            errs.push("reward_scale must be > 0".into());
        }
        errs
    }
}

pub fn shape_reward(reward: f64, cont: bool, success: bool, cfg: &ShapingConfig) -> f64 {
    let penalty = if !cont && !success { cfg.failure_penalty } else { 0.0 };
    reward * cfg.reward_scale + penalty
}

// ---------------------------------------------------------------------------
// Built-in maze

const GRID: usize = 8;
const CELL: usize = FRAME_SIZE / GRID;
pub const GOAL_REWARD: f64 = 10.0;
pub const PELLET_REWARD: f64 = 1.0;

pub mod action {
    pub const NOOP: usize = 0;
    pub const UP: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;
    pub const RIGHT: usize = 4;
    pub const COUNT: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Cell {
    Floor,
    Wall,
    Lava,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeConfig {
    pub sparse: bool,
    pub train_levels: u64,
    pub max_steps: usize,
    pub wall_density: f64,
    pub lava_cells: usize,
    pub pellets: usize,
}

impl MazeConfig {
    pub fn sparse(train_levels: u64) -> Self {
        Self {
            sparse: true,
            train_levels,
            max_steps: 48,
            wall_density: 0.2,
            lava_cells: 2,
            pellets: 0,
        }
    }

    pub fn dense(train_levels: u64) -> Self {
        Self {
            sparse: false,
            train_levels,
            max_steps: 64,
            wall_density: 0.15,
            lava_cells: 2,
            pellets: 6,
        }
    }
}

/// One generated level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    cells: Vec<Cell>,
    start: (usize, usize),
    goal: Option<(usize, usize)>,
    pellets: Vec<(usize, usize)>,
    background: [u8; 3],
    wall_color: [u8; 3],
}

fn idx(p: (usize, usize)) -> usize {
    p.1 * GRID + p.0
}

fn neighbors(p: (usize, usize)) -> impl Iterator<Item = (usize, (usize, usize))> {
    let (x, y) = (p.0 as i64, p.1 as i64);
    [
        (action::UP, (x, y - 1)),
        (action::DOWN, (x, y + 1)),
        (action::LEFT, (x - 1, y)),
        (action::RIGHT, (x + 1, y)),
    ]
    .into_iter()
    .filter(|(_, (x, y))| *x >= 0 && *y >= 0 && (*x as usize) < GRID && (*y as usize) < GRID)
    .map(|(a, (x, y))| (a, (x as usize, y as usize)))
}

impl Level {
    pub fn generate(seed: u64, cfg: &MazeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = [
            rng.random_range(0..60u8),
            rng.random_range(0..60u8),
            rng.random_range(20..80u8),
        ];
        let wall_color = [
            rng.random_range(110..170u8),
            rng.random_range(110..170u8),
            rng.random_range(110..170u8),
        ];
        loop {
            let mut cells = vec![Cell::Floor; GRID * GRID];
            for c in cells.iter_mut() {
                if rng.random::<f64>() < cfg.wall_density {
                    *c = Cell::Wall;
                }
            }
            let start = (0, rng.random_range(0..GRID));
            cells[idx(start)] = Cell::Floor;
            let goal = if cfg.sparse {
                let g = (GRID - 1, rng.random_range(0..GRID));
                cells[idx(g)] = Cell::Floor;
                Some(g)
            } else {
                None
            };
            let mut level = Level {
                cells,
                start,
                goal,
                pellets: Vec::new(),
                background,
                wall_color,
            };
            let reachable = level.reachable_from(start);
            if let Some(g) = goal {
                if !reachable[idx(g)] {
                    continue;
                }
            }
            // Lava and pellets go on reachable floor cells off the shortest route.
            let route = goal.and_then(|g| level.shortest_path(start, g)).unwrap_or_default();
            let mut free: Vec<(usize, usize)> = (0..GRID * GRID)
                .map(|i| (i % GRID, i / GRID))
                .filter(|&p| {
                    reachable[idx(p)] && p != start && Some(p) != goal && !route.contains(&p)
                })
                .collect();
            if free.len() < cfg.lava_cells + cfg.pellets {
                continue;
            }
            for _ in 0..cfg.lava_cells {
                let p = free.swap_remove(rng.random_range(0..free.len()));
                level.cells[idx(p)] = Cell::Lava;
            }
            if !cfg.sparse {
                for _ in 0..cfg.pellets {
                    let p = free.swap_remove(rng.random_range(0..free.len()));
                    level.pellets.push(p);
                }
                // Lava may cut pellets off from the start.
                let reach = level.reachable_from(start);
                if level.pellets.iter().any(|&p| !reach[idx(p)]) {
                    continue;
                }
            } else if let Some(g) = goal {
                if level.shortest_path(start, g).is_none() {
                    continue;
                }
            }
            return level;
        }
    }

    fn passable(&self, p: (usize, usize)) -> bool {
        self.cells[idx(p)] == Cell::Floor
    }

    fn reachable_from(&self, from: (usize, usize)) -> Vec<bool> {
        let mut seen = vec![false; GRID * GRID];
        let mut queue = VecDeque::from([from]);
        seen[idx(from)] = true;
        while let Some(p) = queue.pop_front() {
            for (_, q) in neighbors(p) {
                if !seen[idx(q)] && self.passable(q) {
                    seen[idx(q)] = true;
                    queue.push_back(q);
                }
            }
        }
        seen
    }

    /// Shortest route over floor cells, including both endpoints.
    fn shortest_path(&self, from: (usize, usize), to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; GRID * GRID];
        let mut seen = vec![false; GRID * GRID];
        let mut queue = VecDeque::from([from]);
        seen[idx(from)] = true;
        while let Some(p) = queue.pop_front() {
            if p == to {
                let mut path = vec![p];
                let mut cur = p;
                while let Some(q) = prev[idx(cur)] {
                    path.push(q);
                    cur = q;
                }
                path.reverse();
                return Some(path);
            }
            for (_, q) in neighbors(p) {
                if !seen[idx(q)] && self.passable(q) {
                    seen[idx(q)] = true;
                    prev[idx(q)] = Some(p);
                    queue.push_back(q);
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Episode {
    level: Level,
    pos: (usize, usize),
    pellets_left: Vec<(usize, usize)>,
    steps: usize,
    done: bool,
}

/// Grid maze rendered at 64x64. Sparse mode: reach the goal on the right
/// edge for a reward of 10. Dense mode: collect pellets worth 1 each.
/// Lava and the step limit end the episode as a failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeEnv {
    spec: EnvSpec,
    cfg: MazeConfig,
    mode: LevelMode,
    episode: Option<Episode>,
}

impl MazeEnv {
    pub fn new(cfg: MazeConfig, mode: LevelMode) -> Result<Self> {
        if cfg.train_levels == 0 {
            return Err(Error::Config("train_levels must be positive".into()));
        }
        if cfg.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        // Bounds that keep level generation from retrying indefinitely.
        if !(0.0..=0.4).contains(&cfg.wall_density) {
            return Err(Error::Config("wall_density must lie in [0, 0.4]".into()));
        }
        if cfg.lava_cells + cfg.pellets > GRID * GRID / 4 {
            return Err(Error::Config(format!(
                "lava_cells + pellets must not exceed {}",
                GRID * GRID / 4
            )));
        }
        let spec = EnvSpec {
            name: if cfg.sparse { "builtin-sparse" } else { "builtin-dense" }.into(),
            action_count: action::COUNT,
            observation_shape: [FRAME_SIZE, FRAME_SIZE, FRAME_CHANNELS],
            train_level_count: cfg.train_levels,
            sparse: cfg.sparse,
            max_steps: cfg.max_steps,
        };
        Ok(Self {
            spec,
            cfg,
            mode,
            episode: None,
        })
    }

    pub fn mode(&self) -> LevelMode {
        self.mode
    }

    /// Action sequence of a shortest goal route (sparse) or a greedy pellet
    /// tour (dense) for the active episode.
    pub fn scripted_plan(&self) -> Result<Vec<usize>> {
        let ep = self
            .episode
            .as_ref()
            .ok_or_else(|| Error::Contract("no active episode".into()))?;
        let mut targets: Vec<(usize, usize)> = match ep.level.goal {
            Some(g) => vec![g],
            None => ep.pellets_left.clone(),
        };
        let mut pos = ep.pos;
        let mut plan = Vec::new();
        while !targets.is_empty() {
            // Nearest remaining target by path length.
            let (i, path) = targets
                .iter()
                .enumerate()
                .filter_map(|(i, &t)| ep.level.shortest_path(pos, t).map(|p| (i, p)))
                .min_by_key(|(_, p)| p.len())
                .ok_or_else(|| Error::Env("target unreachable".into()))?;
            for w in path.windows(2) {
                let a = neighbors(w[0])
                    .find(|(_, q)| *q == w[1])
                    .map(|(a, _)| a)
                    .expect("consecutive path cells are adjacent");
                plan.push(a);
            }
            pos = targets.swap_remove(i);
        }
        Ok(plan)
    }

    fn render(&self) -> Frame {
        let ep = self.episode.as_ref().expect("render requires an episode");
        let mut buf = vec![0u8; FRAME_LEN];
        let mut fill = |cx: usize, cy: usize, inset: usize, color: [u8; 3]| {
            for y in cy * CELL + inset..(cy + 1) * CELL - inset {
                for x in cx * CELL + inset..(cx + 1) * CELL - inset {
                    let o = (y * FRAME_SIZE + x) * FRAME_CHANNELS;
                    buf[o..o + 3].copy_from_slice(&color);
                }
            }
        };
        for cy in 0..GRID {
            for cx in 0..GRID {
                let color = match ep.level.cells[idx((cx, cy))] {
                    Cell::Floor => ep.level.background,
                    Cell::Wall => ep.level.wall_color,
                    Cell::Lava => [220, 40, 20],
                };
                fill(cx, cy, 0, color);
            }
        }
        if let Some(g) = ep.level.goal {
            fill(g.0, g.1, 1, [250, 210, 30]);
        }
        for &p in &ep.pellets_left {
            fill(p.0, p.1, 2, [40, 230, 90]);
        }
        fill(ep.pos.0, ep.pos.1, 1, [60, 140, 255]);
        Frame(buf)
    }
}

impl Environment for MazeEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, level_seed: u64) -> Result<Frame> {
        if self.mode == LevelMode::Train && level_seed >= self.cfg.train_levels {
            return Err(Error::Env(format!(
                "level {level_seed} is outside the {} training levels",
                self.cfg.train_levels
            )));
        }
        let level = Level::generate(level_seed, &self.cfg);
        self.episode = Some(Episode {
            pos: level.start,
            pellets_left: level.pellets.clone(),
            level,
            steps: 0,
            done: false,
        });
        Ok(self.render())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= action::COUNT {
            return Err(Error::Env(format!("invalid action {action}")));
        }
        let max_steps = self.cfg.max_steps;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Contract("step before reset".into()))?;
        if ep.done {
            return Err(Error::Contract("step after termination".into()));
        }
        ep.steps += 1;
        if action != action::NOOP {
            if let Some((_, q)) = neighbors(ep.pos).find(|(a, _)| *a == action) {
                if ep.level.cells[idx(q)] != Cell::Wall {
                    ep.pos = q;
                }
            }
        }
        let mut reward = 0.0;
        let mut success = false;
        let mut done = false;
        if ep.level.cells[idx(ep.pos)] == Cell::Lava {
            done = true;
        } else if ep.level.goal == Some(ep.pos) {
            reward = GOAL_REWARD;
            success = true;
            done = true;
        } else if let Some(i) = ep.pellets_left.iter().position(|&p| p == ep.pos) {
            ep.pellets_left.swap_remove(i);
            reward = PELLET_REWARD;
            if ep.pellets_left.is_empty() {
                success = true;
                done = true;
            }
        }
        if !done && ep.steps >= max_steps {
            done = true;
        }
        ep.done = done;
        Ok(StepOutcome {
            observation: self.render(),
            reward,
            cont: !done,
            success,
        })
    }
}

// ---------------------------------------------------------------------------
// External environments

/// Minimal interface of an external environment binding that reports only
/// `(observation, reward, done)`.
pub trait RawEnvironment: Send {
    fn action_count(&self) -> usize;
    fn reset(&mut self, level_seed: u64) -> Result<Frame>;
    fn step(&mut self, action: usize) -> Result<(Frame, f64, bool)>;
}

/// Adapts a [`RawEnvironment`], inferring success as "terminated with a
/// positive final reward".
pub struct SuccessInferring<E> {
    inner: E,
    spec: EnvSpec,
    mode: LevelMode,
    done: bool,
}

impl<E: RawEnvironment> SuccessInferring<E> {
    pub fn new(inner: E, name: &str, train_levels: u64, mode: LevelMode, sparse: bool) -> Self {
        let spec = EnvSpec {
            name: name.to_string(),
            action_count: inner.action_count(),
            observation_shape: [FRAME_SIZE, FRAME_SIZE, FRAME_CHANNELS],
            train_level_count: train_levels,
            sparse,
            max_steps: usize::MAX,
        };
        Self {
            inner,
            spec,
            mode,
            done: true,
        }
    }
}

impl<E: RawEnvironment> Environment for SuccessInferring<E> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, level_seed: u64) -> Result<Frame> {
        if self.mode == LevelMode::Train && level_seed >= self.spec.train_level_count {
            return Err(Error::Env(format!("level {level_seed} is outside the training set")));
        }
        self.done = false;
        self.inner.reset(level_seed)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step after termination".into()));
        }
        let (observation, reward, done) = self.inner.step(action)?;
        if observation.0.len() != FRAME_LEN {
            return Err(Error::Env(format!(
                "external observation has {} bytes, expected {FRAME_LEN}",
                observation.0.len()
            )));
        }
        self.done = done;
        Ok(StepOutcome {
            observation,
            reward,
            cont: !done,
            success: done && reward > 0.0,
        })
    }
}

/// Builds the environment named in the configuration. `procgen:<game>`
/// names need an external binding that this build does not link; they fall
/// back to the built-in maze with the same reward density.
pub fn make_env(name: &str, train_levels: u64, mode: LevelMode) -> Result<Box<dyn Environment>> {
    let cfg = match name {
        "builtin-sparse" => MazeConfig::sparse(train_levels),
        "builtin-dense" => MazeConfig::dense(train_levels),
        other => match other.strip_prefix("procgen:") {
            Some(game) => {
                let dense = matches!(game, "chaser" | "plunder" | "bigfish" | "starpilot");
                log::warn!(
                    "no ProcGen binding available; using the built-in {} maze for {game}",
                    if dense { "dense" } else { "sparse" }
                );
                if dense {
                    MazeConfig::dense(train_levels)
                } else {
                    MazeConfig::sparse(train_levels)
                }
            }
            None => return Err(Error::Config(format!("unknown environment {other:?}"))),
        },
    };
    Ok(Box::new(MazeEnv::new(cfg, mode)?))
}

/// Checks an environment name without constructing it.
pub fn known_env(name: &str) -> bool {
    matches!(name, "builtin-sparse" | "builtin-dense") || name.starts_with("procgen:")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn run_plan(env: &mut MazeEnv) -> (f64, bool, usize) {
        let plan = env.scripted_plan().unwrap();
        let mut total = 0.0;
        for (i, a) in plan.iter().enumerate() {
            let out = env.step(*a).unwrap();
            total += out.reward;
            if !out.cont {
                return (total, out.success, i + 1);
            }
        }
        (total, false, plan.len())
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut env = MazeEnv::new(MazeConfig::sparse(20), LevelMode::Train).unwrap();
        let a = env.reset(3).unwrap();
        let b = env.reset(3).unwrap();
        let c = env.reset(4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.0.len(), FRAME_LEN);
        assert!(a.to_unit().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn train_mode_rejects_foreign_levels() {
        let mut env = MazeEnv::new(MazeConfig::sparse(20), LevelMode::Train).unwrap();
        assert!(matches!(env.reset(20), Err(Error::Env(_))));
        let mut test = MazeEnv::new(MazeConfig::sparse(20), LevelMode::Test).unwrap();
        assert!(test.reset(u64::MAX - 5).is_ok());
        let spec = env.spec().clone();
        let mut rng = stream_rng(0, "levels", 0);
        assert!((0..1000).all(|_| sample_level(&spec, LevelMode::Train, &mut rng) < 20));
    }

    #[test]
    fn scripted_policy_reaches_the_goal() {
        let mut env = MazeEnv::new(MazeConfig::sparse(1000), LevelMode::Test).unwrap();
        for seed in 0..200 {
            env.reset(seed).unwrap();
            let (total, success, _) = run_plan(&mut env);
            assert_eq!(total, GOAL_REWARD, "level {seed}");
            assert!(success);
        }
    }

    #[test]
    fn sparse_non_goal_steps_pay_nothing() {
        let mut env = MazeEnv::new(MazeConfig::sparse(10), LevelMode::Train).unwrap();
        env.reset(1).unwrap();
        let out = env.step(action::NOOP).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(out.cont);
    }

    #[test]
    fn dense_mode_pays_for_pellets() {
        let mut env = MazeEnv::new(MazeConfig::dense(50), LevelMode::Train).unwrap();
        for seed in 0..50 {
            env.reset(seed).unwrap();
            let plan = env.scripted_plan().unwrap();
            let mut rewards = Vec::new();
            let mut last = None;
            for a in plan {
                let out = env.step(a).unwrap();
                rewards.push(out.reward);
                let done = !out.cont;
                last = Some(out);
                if done {
                    break;
                }
            }
            let pellets: f64 = rewards.iter().filter(|&&r| r > 0.0).sum();
            let last = last.unwrap();
            if last.success {
                assert_eq!(pellets, 6.0 * PELLET_REWARD);
            } else {
                // The greedy tour can exceed the step limit on long levels.
                assert!(!last.cont && pellets > 0.0);
            }
        }
    }

    #[test]
    fn episodes_always_terminate() {
        let cfg = MazeConfig::sparse(5);
        let mut env = MazeEnv::new(cfg.clone(), LevelMode::Train).unwrap();
        env.reset(0).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            if !env.step(action::NOOP).unwrap().cont {
                break;
            }
        }
        assert_eq!(steps, cfg.max_steps);
        assert!(matches!(env.step(action::NOOP), Err(Error::Contract(_))));
    }

    #[test]
    fn shaping_examples() {
        let coinrun = ShapingConfig::for_env("procgen:coinrun");
        assert_eq!(shape_reward(0.0, false, false, &coinrun), -10.0);
        assert_eq!(shape_reward(10.0, false, true, &coinrun), 10.0);
        let chaser = ShapingConfig::for_env("procgen:chaser");
        assert_eq!(shape_reward(1.0, true, false, &chaser), 25.0);
        assert_eq!(ShapingConfig::for_env("procgen:plunder").failure_penalty, 0.0);
        assert_eq!(shape_reward(0.0, true, false, &coinrun), 0.0);
    }

    struct Scripted {
        rewards: Vec<f64>,
        t: usize,
    }

    impl RawEnvironment for Scripted {
        fn action_count(&self) -> usize {
            3
        }
        fn reset(&mut self, _: u64) -> Result<Frame> {
            self.t = 0;
            Ok(Frame(vec![0; FRAME_LEN]))
        }
        fn step(&mut self, _: usize) -> Result<(Frame, f64, bool)> {
            let r = self.rewards[self.t];
            self.t += 1;
            Ok((Frame(vec![0; FRAME_LEN]), r, self.t == self.rewards.len()))
        }
    }

    #[test]
    fn adapter_infers_success_from_final_reward() {
        let mut env = SuccessInferring::new(
            Scripted { rewards: vec![0.0, 5.0], t: 0 },
            "procgen:coinrun",
            10,
            LevelMode::Train,
            true,
        );
        env.reset(0).unwrap();
        assert!(!env.step(0).unwrap().success);
        let last = env.step(0).unwrap();
        assert!(last.success && !last.cont);

        let mut env = SuccessInferring::new(
            Scripted { rewards: vec![0.0], t: 0 },
            "procgen:coinrun",
            10,
            LevelMode::Train,
            true,
        );
        env.reset(0).unwrap();
        assert!(!env.step(0).unwrap().success);
        assert!(env.reset(11).is_err());
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(make_env("atari", 1, LevelMode::Train), Err(Error::Config(_))));
        assert!(make_env("procgen:chaser", 1, LevelMode::Train).is_ok());
    }

    #[test]
    fn crowded_levels_are_rejected() {
        let cfg = MazeConfig { pellets: 20, ..MazeConfig::dense(5) };
        assert!(matches!(MazeEnv::new(cfg, LevelMode::Train), Err(Error::Config(_))));
        let cfg = MazeConfig { wall_density: 0.9, ..MazeConfig::sparse(5) };
        assert!(matches!(MazeEnv::new(cfg, LevelMode::Train), Err(Error::Config(_))));
    }
}
