use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pinn_core::network::Checkpoint;

const BIN: &str = env!("CARGO_BIN_EXE_pinn-forge");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PINN_FORGE_OUT").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_SHM: &str = r#"
[problem]
kind = "shm"
constant = 20.0

[network]
layer_dims = [1, 8, 8, 1]

[optimizer]
kind = "lbfgs"

[run]
max_epochs = 40
seed = 7
"#;

fn files_with(dir: &Path, suffix: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(suffix))
        .collect();
    v.sort();
    v
}

#[test]
fn adam_override_writes_exactly_max_epochs_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "shm.toml", SMALL_SHM);
    let out = tmp.path().join("out");
    let o = run(&["train", "--config", &cfg, "--optimizer", "adam", "--max-epochs", "10", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("shm_20_adam_metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,loss_total,loss_F,loss_I,loss_B,lambda_I,l2_rel_error,grad_norm,wall_time_ms");
    assert_eq!(lines.len(), 11);
    assert_eq!(files_with(&out, ".json"), vec!["shm_20_adam_10.json".to_string()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("relative L2 error"), "{stdout}");
}

#[test]
fn missing_or_malformed_config_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write_config(tmp.path(), "bad.toml", "[problem]\nkind = \"shm\"\nconstant = 20\n[run]\nepochs = 3\n");
    let o = run(&["train", "--config", &bad, "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epochs") && err.contains("line 5"), "{err}");
}

#[test]
fn unknown_recipe_lists_names() {
    let o = run(&["reproduce", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("shm-transfer-chain") && err.contains("wave-c1"), "{err}");
}

#[test]
fn eval_missing_checkpoint_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--checkpoint", tmp.path().join("none.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transfer_round_trip_and_incompatible_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "shm.toml", SMALL_SHM);
    let base_dir = tmp.path().join("base");
    let o = run(&["train", "--config", &cfg, "--out-dir", base_dir.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = base_dir.join(&files_with(&base_dir, ".json")[0]);
    let base = Checkpoint::load(&ckpt).unwrap();

    // same problem: first recorded loss is the base's final loss
    let ft_dir = tmp.path().join("ft");
    let o = run(&[
        "transfer",
        "--config",
        &cfg,
        "--base-checkpoint",
        ckpt.to_str().unwrap(),
        "--max-epochs",
        "3",
        "--out-dir",
        ft_dir.to_str().unwrap(),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 1)));
    let metrics = fs::read_to_string(ft_dir.join("shm_20_lbfgs_metrics.csv")).unwrap();
    let first: f64 = metrics.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - base.meta.final_loss).abs() <= 1e-12 * base.meta.final_loss, "{first} vs {}", base.meta.final_loss);

    // wider network in the config than in the checkpoint
    let wide = write_config(tmp.path(), "wide.toml", &SMALL_SHM.replace("[1, 8, 8, 1]", "[1, 16, 16, 1]"));
    let o = run(&["transfer", "--config", &wide, "--base-checkpoint", ckpt.to_str().unwrap(), "--out-dir", ft_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    // transfer without a checkpoint is a usage error
    let o = run(&["transfer", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));

    // eval prints the error with two decimals and writes the field dump
    let ev_dir = tmp.path().join("eval");
    let o = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--out-dir", ev_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let printed = String::from_utf8_lossy(&o.stdout).trim().to_string();
    let (_, decimals) = printed.split_once('.').unwrap();
    assert_eq!(decimals.len(), 2, "{printed}");
    let field = fs::read_to_string(ev_dir.join("shm_20_lbfgs_field.csv")).unwrap();
    assert_eq!(field.lines().next(), Some("x,t,u_exact,u_pred,abs_err"));
    assert_eq!(field.lines().count(), 1001);
}

#[test]
fn out_dir_env_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "shm.toml", SMALL_SHM);
    let out = tmp.path().join("from_env");
    let o = Command::new(BIN)
        .args(["train", "--config", &cfg, "--max-epochs", "2"])
        .env("PINN_FORGE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("shm_20_lbfgs_metrics.csv").exists());
}
