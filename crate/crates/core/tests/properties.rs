use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beliefgraph::belief_graph::{kl_factorized_to_joint, log_partition, marginals, GibbsDistribution, TransitionPotentials};
use beliefgraph::embeddings::{synth_table, EmbeddingTable, EmbeddingVocab};
use beliefgraph::trainer::{
    checkpoint_bytes, params_from_checkpoint, rollout, trajectory_loss, trajectory_terms, ActionSelection, Objective,
    ParamSet, RolloutOptions,
};
use beliefgraph::{BeliefMarginals, ExpectationMode, ModelConfig, Trajectory};

fn potentials(k: usize, values: &[f64]) -> TransitionPotentials {
    TransitionPotentials::from_upper(values[..k].to_vec(), &values[k..k + k * (k - 1) / 2]).unwrap()
}

fn world(seed: u64, mode: ExpectationMode) -> (ModelConfig, EmbeddingTable) {
    let mut cfg = ModelConfig::with_survey_masks(4, 3, 8, 4);
    cfg.expectation_mode = mode;
    let table = synth_table(&cfg, &EmbeddingVocab::new(vec![0, 1, 2], cfg.num_actions), seed);
    (cfg, table)
}

fn random_traj(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Trajectory {
    Trajectory {
        agent_id: "fuzz".into(),
        observation_ids: (0..cfg.t).map(|_| rng.random_range(0..3)).collect(),
        action_ids: (0..cfg.t)
            .map(|t| {
                let m = cfg.mask(t).unwrap();
                m[rng.random_range(0..m.len())]
            })
            .collect(),
        belief_ratings: None,
        initial_ratings: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_are_probabilities(k in 1usize..=5, values in prop::collection::vec(-30.0f64..30.0, 15)) {
        let cfg = ModelConfig::unmasked(k, 1, 2, 4, 2);
        let pot = potentials(k, &values);
        let g = GibbsDistribution::new(&pot, &cfg).unwrap();
        prop_assert!((g.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for p in marginals(&pot, &cfg).unwrap().as_slice() {
            prop_assert!((0.0..=1.0).contains(p));
        }
        prop_assert!(log_partition(&pot, &cfg).unwrap().is_finite());
    }

    #[test]
    fn shifting_one_unary_moves_its_marginal_monotonically(
        k in 1usize..=4,
        values in prop::collection::vec(-3.0f64..3.0, 10),
        delta in 0.01f64..2.0,
    ) {
        let cfg = ModelConfig::unmasked(k, 1, 2, 4, 2);
        let pot = potentials(k, &values);
        let mut up = pot.clone();
        up.unary[0] += delta;
        let before = marginals(&pot, &cfg).unwrap().0[0];
        let after = marginals(&up, &cfg).unwrap().0[0];
        prop_assert!(after > before);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_at_independent_match(
        k in 1usize..=4,
        u in prop::collection::vec(-4.0f64..4.0, 4),
        q in prop::collection::vec(0.02f64..0.98, 4),
    ) {
        let cfg = ModelConfig::unmasked(k, 1, 2, 4, 2);
        let pot = TransitionPotentials::independent(u[..k].to_vec());
        let kl = kl_factorized_to_joint(&BeliefMarginals(q[..k].to_vec()), &pot, &cfg).unwrap();
        prop_assert!(kl >= -1e-10);
        // q equal to the independent prior's own marginals
        let m = marginals(&pot, &cfg).unwrap();
        let kl0 = kl_factorized_to_joint(&m, &pot, &cfg).unwrap();
        prop_assert!(kl0.abs() < 1e-9, "{kl0}");
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000) {
        let (cfg, _) = world(seed, ExpectationMode::MeanField);
        let p = ParamSet::init(&cfg, seed);
        let bytes = checkpoint_bytes(&p, &cfg);
        prop_assert_eq!(params_from_checkpoint(&bytes, &cfg).unwrap(), p);
    }

    #[test]
    fn sampled_rollouts_respect_masks(seed in 0u64..500) {
        let (cfg, table) = world(seed % 7, ExpectationMode::MeanField);
        let params = ParamSet::init(&cfg, seed);
        let opts = RolloutOptions { selection: ActionSelection::Sample, rng_seed: seed, ..Default::default() };
        let r = rollout(&params, &table, &cfg, &[0, 1, 2], &opts).unwrap();
        for (t, a) in r.actions().iter().enumerate() {
            prop_assert!(cfg.mask(t).unwrap().contains(a));
        }
    }
}

#[test]
fn loss_stays_finite_under_extreme_parameters() {
    for seed in 0..100u64 {
        let mode = if seed % 2 == 0 { ExpectationMode::MeanField } else { ExpectationMode::Enumerate };
        let (cfg, table) = world(seed, mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = [1.0, 10.0, 100.0][seed as usize % 3];
        let flat: Vec<f64> = ParamSet::init(&cfg, seed)
            .flatten()
            .iter()
            .map(|v| v * scale + rng.random_range(-scale..scale))
            .collect();
        let params = ParamSet::unflatten(&cfg, &flat).unwrap();
        let traj = random_traj(&cfg, &mut rng);
        for tf in [false, true] {
            let obj = Objective {
                teacher_forcing: tf,
                kl_weight: 1.0,
            };
            let loss = trajectory_loss(&traj, &params, &table, &cfg, &obj);
            assert!(
                matches!(loss, Ok(l) if l.is_finite()),
                "seed {seed} scale {scale} mode {mode:?} tf {tf}: {loss:?}"
            );
        }
    }
}

#[test]
fn enumerated_action_term_never_exceeds_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..30 {
        let (cfg, table) = world(seed, ExpectationMode::Enumerate);
        let params = ParamSet::init(&cfg, seed);
        let traj = random_traj(&cfg, &mut rng);
        for s in trajectory_terms(&traj, &params, &table, &cfg, &Objective::default()).unwrap() {
            assert!(s.action_term <= 0.0 && s.kl_term >= -1e-10);
        }
    }
}
