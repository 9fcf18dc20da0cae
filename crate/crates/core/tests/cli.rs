use std::path::Path;
use std::process::{Command, Output};

fn daynight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daynight"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const TINY: &[&str] = &[
    "--set", "day_epochs=1",
    "--set", "night_epochs=1",
    "--set", "day_steps=12",
    "--set", "world_updates=1",
    "--set", "world_batch=2",
    "--set", "seq_len=4",
    "--set", "agent_updates=1",
    "--set", "agent_batch=2",
    "--set", "horizon=4",
    "--set", "test_repetitions=1",
    "--set", "seed_episodes=1",
    "--set", "hidden=8",
    "--set", "categoricals=2",
    "--set", "classes=4",
    "--set", "units=8",
    "--set", "mlp_layers=1",
    "--set", "encoder_filters=[2, 2, 2, 2]",
    "--set", "decoder_filters=[2, 2, 2, 3]",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--preset", "desk", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    daynight(&args)
}

#[test]
fn configuration_mistakes_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&train(&out, &["--mode", "dream_sideways"])), 1);
    assert_eq!(code(&train(&out, &["--env", "atari:pong"])), 1);
    assert_eq!(code(&train(&out, &["--set", "lambda=1.5"])), 1);
    assert_eq!(code(&daynight(&["train", "--preset", "laptop"])), 1);
    assert_eq!(code(&daynight(&["train", "--bogus-flag"])), 1);
    assert_eq!(code(&daynight(&["plot", "--logs"])), 1);
    assert!(!out.exists());
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.safetensors");
    let out = daynight(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn help_exits_cleanly() {
    let out = daynight(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "eval", "dream-export", "plot"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn train_eval_export_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = train(&run, &["--mode", "dream_mixture", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("finished 2 epochs"));

    let latest = run.join("checkpoints").join("latest.safetensors");
    let ckpt = latest.to_str().unwrap();
    let eval = daynight(&["eval", "--checkpoint", ckpt, "--episodes", "2"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("mean return"));

    let dreams = dir.path().join("dreams");
    let export = daynight(&[
        "dream-export", "--checkpoint", ckpt, "--mode", "random_swing", "--count", "2",
        "--out", dreams.to_str().unwrap(),
    ]);
    assert_eq!(code(&export), 0, "{}", String::from_utf8_lossy(&export.stderr));
    let png = String::from_utf8_lossy(&export.stdout).trim().to_string();
    assert!(png.ends_with(".png") && Path::new(&png).exists());
    assert_eq!(code(&daynight(&["dream-export", "--checkpoint", ckpt, "--mode", "nightmare"])), 1);

    let plots = dir.path().join("plots");
    let metrics = run.join("metrics.jsonl");
    let plot = daynight(&["plot", "--logs", metrics.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code(&plot), 0, "{}", String::from_utf8_lossy(&plot.stderr));
    assert!(plots.join("builtin-sparse.svg").exists());

    let resumed = daynight(&["train", "--resume", ckpt, "--seed", "4"]);
    assert_eq!(code(&resumed), 1);
}
