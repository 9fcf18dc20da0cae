use rand::Rng;

use daynight::envs::{make_env, shape_reward, Environment, LevelMode, MazeConfig, MazeEnv, ShapingConfig, GOAL_REWARD};
use daynight::rng::stream_rng;

fn episode(env: &mut dyn Environment, seed: u64, mut pick: impl FnMut(usize) -> usize) -> (f64, f64, bool) {
    let shaping = ShapingConfig::for_env(&env.spec().name.clone());
    env.reset(seed).unwrap();
    let (mut raw, mut shaped) = (0.0, 0.0);
    for t in 0..env.spec().max_steps {
        let out = env.step(pick(t)).unwrap();
        raw += out.reward;
        shaped += shape_reward(out.reward, out.cont, out.success, &shaping);
        if !out.cont {
            return (raw, shaped, out.success);
        }
    }
    panic!("episode on level {seed} never terminated");
}

#[test]
fn scripted_routes_beat_a_random_policy_on_held_out_levels() {
    let mut rng = stream_rng(5, "random-policy", 0);
    let mut scripted = 0.0;
    let mut random = 0.0;
    let levels = 100;
    for seed in 1_000_000..1_000_000 + levels {
        let mut env = MazeEnv::new(MazeConfig::sparse(200), LevelMode::Test).unwrap();
        env.reset(seed).unwrap();
        let plan = env.scripted_plan().unwrap();
        let (raw, shaped, success) = episode(&mut env, seed, |t| plan[t.min(plan.len() - 1)]);
        assert!(success);
        assert_eq!(raw, GOAL_REWARD);
        assert_eq!(shaped, GOAL_REWARD);
        scripted += raw;

        let mut env = make_env("builtin-sparse", 200, LevelMode::Test).unwrap();
        let actions = env.spec().action_count;
        random += episode(env.as_mut(), seed, |_| rng.random_range(0..actions)).0;
    }
    let (scripted, random) = (scripted / levels as f64, random / levels as f64);
    assert_eq!(scripted, GOAL_REWARD);
    assert!(random < 0.5 * GOAL_REWARD, "random policy averaged {random}");
}

#[test]
fn sparse_failures_are_penalised_only_after_shaping() {
    let mut env = make_env("builtin-sparse", 50, LevelMode::Train).unwrap();
    let mut rng = stream_rng(9, "failures", 0);
    let actions = env.spec().action_count;
    let mut failures = 0;
    for seed in 0..50 {
        let (raw, shaped, success) = episode(env.as_mut(), seed, |_| rng.random_range(0..actions));
        if !success {
            failures += 1;
            assert!(raw >= 0.0);
            assert_eq!(shaped, raw - 10.0);
        }
    }
    assert!(failures > 0);
}

#[test]
fn dense_pellet_tours_collect_reward() {
    let mut env = MazeEnv::new(MazeConfig::dense(100), LevelMode::Train).unwrap();
    for seed in 0..20 {
        env.reset(seed).unwrap();
        let plan = env.scripted_plan().unwrap();
        let (raw, _, _) = episode(&mut env, seed, |t| plan[t.min(plan.len() - 1)]);
        assert!(raw > 0.0, "level {seed}");
    }
}

#[test]
fn level_sets_are_disjoint_by_mode() {
    let mut train = make_env("builtin-dense", 30, LevelMode::Train).unwrap();
    let mut test = make_env("builtin-dense", 30, LevelMode::Test).unwrap();
    assert_eq!(train.reset(7).unwrap(), test.reset(7).unwrap());
    assert!(train.reset(30).is_err());
    assert!(test.reset(30).is_ok());
}
