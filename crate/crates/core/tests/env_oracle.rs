use std::sync::Arc;

use da6_core::env::{default_map, Action, Env, EnvConfig, EnvSpec};
use da6_core::testkit::{conservation_violations, env_oracle_mismatches, reward_accounting_violations};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn transitions_agree_with_brute_force_oracle() {
    let (comparisons, mismatches) = env_oracle_mismatches(300, 17).unwrap();
    assert!(comparisons >= 4000);
    assert_eq!(mismatches, 0);
}

#[test]
fn object_counts_and_occupancy_are_conserved() {
    assert_eq!(conservation_violations(10, 4).unwrap(), 0);
}

#[test]
fn returns_equal_collections_minus_collisions() {
    assert_eq!(reward_accounting_violations(10, 8).unwrap(), 0);
}

#[test]
fn replaying_a_seed_and_action_log_reproduces_the_episode() {
    let spec = Arc::new(EnvSpec::new(default_map(), &EnvConfig::default()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let log: Vec<Vec<Action>> = (0..spec.horizon)
        .map(|_| (0..spec.num_agents()).map(|_| *Action::ALL.choose(&mut rng).unwrap()).collect())
        .collect();
    let play = || {
        let mut env = Env::new(spec.clone(), Vec::new(), 0).unwrap();
        env.reset(99).unwrap();
        let mut states = Vec::new();
        for actions in &log {
            let step = env.step(actions).unwrap();
            states.push((env.state().clone(), step.rewards));
        }
        states
    };
    assert_eq!(play(), play());
}
