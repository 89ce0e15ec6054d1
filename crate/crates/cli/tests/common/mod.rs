#![allow(dead_code)]

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlnav::curriculum::{behavior_dir, make_behavior_env, scripted_actions, BehaviorId, TRAJECTORY_FILE};
use wlnav::domrand::format::write_batch;
use wlnav::domrand::{replay_and_record, BatchHeader, Provenance};
use wlnav::sim::RewardConfig;
use wlnav_cli::RunConfig;

/// A run small enough for a unit test: a few iterations of everything.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 5,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.curriculum.n_envs = 2;
    cfg.curriculum.steps_per_iter = 64;
    cfg.curriculum.budget_straight = 128;
    cfg.curriculum.budget_other = 64;
    cfg.ppo.minibatch = 32;
    cfg.ppo.epochs = 1;
    cfg.domrand.n_rand = 3;
    cfg.primary.iterations = 3;
    cfg.primary.checkpoint_every = 1;
    cfg.primary.mix.n_on = 64;
    cfg.primary.mix.n_batch = 32;
    cfg.primary.mix.baseline_batch = 64;
    cfg.eval.suite_size = 4;
    cfg
}

/// Replaces stored secondary trajectories by scripted solutions, so batch
/// commands have data regardless of how far training got.
pub fn store_scripted_trajectories(cfg: &RunConfig, per_behavior: usize) {
    let root = cfg.secondaries_dir();
    let rc = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for b in BehaviorId::ALL {
        let mut eps = Vec::new();
        for i in 0..per_behavior {
            let env = make_behavior_env(b, &mut rng);
            let actions = scripted_actions(b, &env).expect("scripted oracle solves its env");
            let prov = Provenance {
                behavior: b,
                env_id: i as u32,
                traj_id: 0,
                rand_id: 0,
            };
            eps.push(replay_and_record(&env, &actions, prov, &rc).expect("oracle replay succeeds"));
        }
        let dir = behavior_dir(&root, b);
        std::fs::create_dir_all(&dir).unwrap();
        let header = BatchHeader::new(rc.gamma, per_behavior as u32, 1, 0);
        write_batch(&dir.join(TRAJECTORY_FILE), &header, &eps).unwrap();
    }
}
