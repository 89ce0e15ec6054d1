mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{store_scripted_trajectories, tiny_config};
use tempfile::tempdir;
use wlnav::curriculum::{behavior_dir, BehaviorId, METRICS_FILE, POLICY_FILE};
use wlnav::domrand::BatchReader;
use wlnav::nn::{checkpoint, Arch, PolicyNet};
use wlnav::seed::stream_rng;
use wlnav::sim::{Cell, EnvConfig, Obstacle, ObstacleShape, RobotState};
use wlnav_cli::*;

fn sink() -> std::io::Sink {
    std::io::sink()
}

fn random_checkpoint(dir: &Path) -> std::path::PathBuf {
    let net = PolicyNet::<f32>::init(Arch::standard(), &mut stream_rng(3, 0));
    let p = dir.join("net.ckpt");
    checkpoint::save(&net, &p).unwrap();
    p
}

fn write_env(dir: &Path, env: &EnvConfig) -> std::path::PathBuf {
    let p = dir.join("env.toml");
    fs::write(&p, env.to_text()).unwrap();
    p
}

#[test]
fn config_snapshot_round_trips() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    // Partial tables fill in defaults.
    let partial = RunConfig::from_toml("seed = 9\n[ppo.adam]\nlr = 0.002\n").unwrap();
    assert_eq!(partial.seed, 9);
    assert_eq!(partial.ppo.adam.lr, 0.002);
    assert_eq!(partial.ppo.clip, RunConfig::default().ppo.clip);
}

#[test]
fn bad_configs_are_refused() {
    assert!(RunConfig::from_toml("sed = 1\n").is_err());
    assert!(RunConfig::from_toml("seed = \"x\"\n").is_err());
    assert!(RunConfig::from_toml("[ppo]\nclip = -1.0\n").is_err());
    let mut cfg = RunConfig::default();
    cfg.geometry.cell_size = 0.5;
    let err = RunConfig::from_toml(&cfg.to_toml()).unwrap_err();
    assert!(format!("{err:#}").contains("geometry"));
}

#[test]
fn train_secondaries_is_reproducible_and_creates_dirs() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let cfg_a = tiny_config(&a.path().join("nested/out"));
    let mut cfg_b = tiny_config(b.path());
    cfg_b.out_dir = b.path().join("out");
    let ra = cmd_train_secondaries(&cfg_a, None, 1, &mut sink()).unwrap();
    let rb = cmd_train_secondaries(&cfg_b, None, 2, &mut sink()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.len(), 5);
    for bh in BehaviorId::ALL {
        let ma = fs::read(behavior_dir(&cfg_a.secondaries_dir(), bh).join(METRICS_FILE)).unwrap();
        let mb = fs::read(behavior_dir(&cfg_b.secondaries_dir(), bh).join(METRICS_FILE)).unwrap();
        assert_eq!(ma, mb, "{}", bh.name());
        assert!(behavior_dir(&cfg_a.secondaries_dir(), bh).join(POLICY_FILE).exists());
    }
}

#[test]
fn later_behaviors_need_the_straight_policy() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let err = cmd_train_secondaries(&cfg, Some(BehaviorId::Around), 1, &mut sink()).unwrap_err();
    assert!(format!("{err:#}").contains("b1_straight"), "{err:#}");
    cmd_train_secondaries(&cfg, Some(BehaviorId::Straight), 1, &mut sink()).unwrap();
    cmd_train_secondaries(&cfg, Some(BehaviorId::Around), 1, &mut sink()).unwrap();
}

#[test]
fn gen_batch_keeps_every_randomization() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let err = cmd_gen_batch(&cfg, &mut sink()).unwrap_err();
    assert!(format!("{err:#}").contains("train-secondaries"), "{err:#}");
    store_scripted_trajectories(&cfg, 2);
    let (path, s) = cmd_gen_batch(&cfg, &mut sink()).unwrap();
    assert_eq!(s.originals, 10);
    assert_eq!(s.stats.discarded, 0);
    assert_eq!(s.stats.kept, 10 * cfg.domrand.n_rand);
    assert_eq!(s.written, s.originals + s.stats.kept);
    let reader = BatchReader::open(&path).unwrap();
    assert_eq!(reader.len(), s.written);
    let eps = reader.read_all().unwrap();
    assert_eq!(eps.iter().filter(|e| e.provenance.rand_id == 0).count(), 10);
}

#[test]
fn train_modes_and_their_errors() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let bogus = dir.path().join("nope.wlb");
    let err = cmd_train(&cfg, TrainMode::Baseline, Some(&bogus), InitMode::Random, 1, &mut sink()).unwrap_err();
    assert!(format!("{err:#}").contains("--batch-file"));
    let err = cmd_train(&cfg, TrainMode::WithBatch, None, InitMode::Random, 1, &mut sink()).unwrap_err();
    assert!(format!("{err:#}").contains("gen-batch"), "{err:#}");
    let err = cmd_train(&cfg, TrainMode::Baseline, None, InitMode::Straight, 1, &mut sink()).unwrap_err();
    assert!(format!("{err:#}").contains("--random-init"), "{err:#}");

    let base = cmd_train(&cfg, TrainMode::Baseline, None, InitMode::Random, 1, &mut sink()).unwrap();
    assert_eq!(base.metrics.len(), 3);
    for it in 1..=3 {
        assert!(base.run_dir.join(format!("iter_{it:05}.ckpt")).exists());
    }
    assert!(final_checkpoint(&cfg, TrainMode::Baseline).exists());
    let snapshot = fs::read_to_string(base.run_dir.join("config.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&snapshot).unwrap(), cfg);
    let csv = fs::read_to_string(base.run_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    store_scripted_trajectories(&cfg, 1);
    cmd_gen_batch(&cfg, &mut sink()).unwrap();
    let mixed = cmd_train(&cfg, TrainMode::WithBatch, None, InitMode::Random, 1, &mut sink()).unwrap();
    assert!(mixed.run_dir.ends_with("primary_seed5"));
    assert!(final_checkpoint(&cfg, TrainMode::WithBatch).exists());
}

#[test]
fn eval_writes_the_schema() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ckpt = random_checkpoint(dir.path());
    let out = dir.path().join("eval/suite.csv");
    let r = cmd_eval(&cfg, &ckpt, &EvalTarget::Suite, &out).unwrap();
    assert_eq!(r.episodes.len(), 4);
    let csv = fs::read_to_string(&out).unwrap();
    let header = csv.lines().next().unwrap();
    for col in ["success", "collision_free", "steps"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    assert_eq!(csv.lines().count(), 5);
    let r = cmd_eval(&cfg, &ckpt, &EvalTarget::Behavior(BehaviorId::Squeeze, 3), &out).unwrap();
    assert_eq!(r.episodes.len(), 3);
}

#[test]
fn fresh_behavior_envs_differ_from_the_training_set() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let own = eval_envs(&cfg, &EvalTarget::TrainingSet(BehaviorId::Around)).unwrap();
    assert_eq!(own.len(), cfg.curriculum.n_envs);
    let fresh = eval_envs(&cfg, &EvalTarget::Behavior(BehaviorId::Around, 50)).unwrap();
    assert!(own.iter().all(|e| !fresh.contains(e)));
}

#[test]
fn relevance_has_one_row_per_obstacle() {
    let dir = tempdir().unwrap();
    let ckpt = random_checkpoint(dir.path());
    let mut env = EnvConfig::empty(RobotState::at_rest(0.0, 0.0, 0.0), [0.8, 0.0]);
    env.obstacles.push(Obstacle {
        cell: Cell::new(1, 6),
        shape: ObstacleShape::Blocker,
    });
    let env_file = write_env(dir.path(), &env);
    let prefix = dir.path().join("rel");
    let r = cmd_relevance(&ckpt, &env_file, &prefix).unwrap();
    assert_eq!(r.obstacles.len(), 1);
    let csv = fs::read_to_string(dir.path().join("rel.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(fs::read(dir.path().join("rel.ppm")).unwrap().starts_with(b"P6"));
}

#[test]
fn render_of_an_empty_env_is_ground_inside_a_wall() {
    let dir = tempdir().unwrap();
    let env = EnvConfig::empty(RobotState::at_rest(0.0, 0.0, 0.0), [0.8, 0.0]);
    let env_file = write_env(dir.path(), &env);
    let out = dir.path().join("r");
    let files = cmd_render(&env_file, None, &out).unwrap();
    assert_eq!(files.len(), 3);
    let pgm = fs::read(out.join(HEIGHTMAP_PGM)).unwrap();
    assert!(pgm.starts_with(b"P5"));
    let csv = fs::read_to_string(out.join(HEIGHTMAP_CSV)).unwrap();
    assert!(csv.split([',', '\n']).filter(|v| !v.is_empty()).all(|v| v.parse::<f64>().unwrap() == 0.0));
    let ppm = fs::read(out.join(SCENE_FILE)).unwrap();
    assert!(ppm.starts_with(b"P6"));
    let ckpt = random_checkpoint(dir.path());
    cmd_render(&env_file, Some(&ckpt), &out).unwrap();
}

fn wlnav(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wlnav")).args(args).output().unwrap()
}

fn one_line_error(out: &std::process::Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: "), "{err}");
    err
}

#[test]
fn binary_fails_with_one_line_diagnostics() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = [\n").unwrap();
    let b = bad.to_str().unwrap();
    one_line_error(&wlnav(&["--config", b, "gen-batch"]));
    one_line_error(&wlnav(&["eval", dir.path().join("none.ckpt").to_str().unwrap()]));
    let out = dir.path().to_str().unwrap();
    one_line_error(&wlnav(&["--out-dir", out, "gen-batch"]));
    one_line_error(&wlnav(&["--out-dir", out, "train", "--with-batch", "--random-init"]));
    one_line_error(&wlnav(&["--out-dir", out, "train-secondaries", "--only", "b4"]));
    // Flag conflicts are usage errors.
    let o = wlnav(&["train", "--baseline", "--batch-file", "x.wlb"]);
    assert!(!o.status.success());
    let o = wlnav(&["train"]);
    assert!(!o.status.success());
}

#[test]
fn binary_renders_and_shows_config() {
    let dir = tempdir().unwrap();
    let env = EnvConfig::empty(RobotState::at_rest(0.0, 0.0, 0.0), [-0.7, 0.0]);
    let env_file = write_env(dir.path(), &env);
    let out = dir.path().join("img");
    let o = wlnav(&["render", env_file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join(SCENE_FILE).exists());
    let o = wlnav(&["--seed", "42", "show-config"]);
    assert!(o.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 42);
}
