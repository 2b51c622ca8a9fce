mod common;

use common::fixtures::{constant_actor, latent_echo_prior};
use common::{rules, td};
use dice_core::bc_flow::{DemoDataset, FlowPolicy};
use dice_core::dice_rl::{
    argmax_first, bc_filter, bc_filter_rule, best_of_n_select, build_batch, evaluate, finetune, rlpd_ratio,
    sample_mixed_batch, td_target, DicePolicy, FinetuneConfig, LatentBank, ReplayBuffer, RlpdSchedule, Source,
};
use dice_core::envs::{generate_demos, GateWorld, GateWorldConfig};
use dice_core::grad::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_slots(buf: &ReplayBuffer) -> Vec<(Source, usize)> {
    (0..buf.len()).map(|i| (Source::Online, i)).collect()
}

fn td_max_error(seed: u64, k: usize, span: usize, gamma: f32) -> f64 {
    let case = td::random_case(seed, 16, k, span);
    let buf = td::buffer(&case);
    let empty = ReplayBuffer::new(1);
    let batch = build_batch(&empty, &buf, &all_slots(&buf), span, k).unwrap();
    let y = td_target(&batch, &case.actor, &td::q32, gamma).unwrap();
    let expected = td::targets(&case, gamma as f64);
    assert_eq!(y.len(), expected.len());
    y.iter()
        .zip(&expected)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn td_target_matches_brute_force(seed in 0u64..10_000, k in 1usize..=4, span in 1usize..=4, g in 0usize..3) {
        let gamma = [0.0f32, 0.9, 0.99][g];
        let err = td_max_error(seed, k, span, gamma);
        prop_assert!(err <= 1e-6, "max abs error {err}");
    }

    #[test]
    fn rlpd_ratio_is_linear_then_constant(
        start in 0.0f32..=1.0, frac in 0.0f32..=1.0, t_ratio in 1usize..100_000, t in 0usize..200_000,
    ) {
        let end = start * frac;
        let s = RlpdSchedule { start, end, t_ratio };
        let r = rlpd_ratio(t, &s) as f64;
        let expected = rules::linear(start as f64, end as f64, t as f64, t_ratio as f64);
        prop_assert!((r - expected).abs() <= 1e-6);
        prop_assert!(r >= end as f64 - 1e-7 && r <= start as f64 + 1e-7);
    }

    #[test]
    fn argmax_matches_linear_scan(scores in prop::collection::vec(0u8..4, 1..20)) {
        let s: Vec<f32> = scores.iter().map(|&v| v as f32 * 0.25).collect();
        prop_assert_eq!(argmax_first(&s), rules::argmax_scan(&s));
    }
}

#[test]
fn td_target_examples() {
    let case = td::random_case(3, 8, 3, 1);
    let buf = td::buffer(&case);
    let batch = build_batch(&ReplayBuffer::new(1), &buf, &all_slots(&buf), 1, 3).unwrap();
    let y0 = td_target(&batch, &case.actor, &td::q32, 0.0).unwrap();
    for (y, i) in y0.iter().zip(0..) {
        let rec = buf.slot(i);
        assert_eq!(*y, rec.transition.reward_sum);
    }
}

#[test]
fn filter_grid_matches_rule() {
    let grid = [-1.0f32, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];
    let eps = [-0.5f32, -0.25, -0.125, 0.0];
    let mut trues = 0;
    for &qc in &grid {
        for &qp in &grid {
            for &g in &grid {
                for &e in &eps {
                    let want = rules::filter(qc as f64, qp as f64, g as f64, e as f64);
                    assert_eq!(bc_filter_rule(qc, qp, g, e), want, "q_cur {qc} q_pre {qp} g {g} eps {e}");
                    trues += want as usize;
                }
            }
        }
    }
    assert!(trues > 0);
}

#[test]
fn filter_flips_only_at_the_two_thresholds() {
    let (q_pre, g, eps) = (0.25f32, 0.75f32, -0.25f32);
    let sweep: Vec<f32> = (-64..=64).map(|i| i as f32 / 64.0).collect();
    let flags: Vec<bool> = sweep.iter().map(|&q| bc_filter_rule(q, q_pre, g, eps)).collect();
    let flips: Vec<usize> = (1..flags.len()).filter(|&i| flags[i] != flags[i - 1]).collect();
    assert_eq!(flips.len(), 2);
    assert_eq!(sweep[flips[0]], q_pre);
    assert!(!flags[flips[0] - 1] && flags[flips[0]]);
    assert_eq!(sweep[flips[1] - 1], g + eps);
    assert!(flags[flips[1] - 1] && !flags[flips[1]]);
}

#[test]
fn filter_through_networks() {
    let prior = latent_echo_prior(2);
    let q = |_: &[f32], a: &[f32]| a[0];
    let z = [0.5f32, 0.0, 0.0, 0.0];
    let up = constant_actor(4, 0.25);
    assert!(bc_filter(&[0.0, 0.0], &z, &up, &prior, &q, 1.25, -0.25).unwrap());
    assert!(!bc_filter(&[0.0, 0.0], &z, &up, &prior, &q, 0.75, -0.25).unwrap());
    let down = constant_actor(4, -0.25);
    assert!(!bc_filter(&[0.0, 0.0], &z, &down, &prior, &q, 10.0, -0.25).unwrap());
}

#[test]
fn mixed_batch_follows_ratio() {
    let mut demo = ReplayBuffer::new(64);
    let mut online = ReplayBuffer::new(64);
    let case = td::random_case(1, 16, 1, 1);
    for e in &case.episodes {
        let items: Vec<_> = e.transitions.iter().cloned().zip(e.banks.iter().cloned()).collect();
        demo.push_episode(items.clone(), e.tail.clone()).unwrap();
        online.push_episode(items, e.tail.clone()).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let slots = sample_mixed_batch(&demo, &online, 0.3, 10_000, &mut rng).unwrap();
    let frac = slots.iter().filter(|s| s.0 == Source::Demo).count() as f64 / 10_000.0;
    assert!((frac - 0.3).abs() <= 0.02, "demo fraction {frac}");
    assert!(slots.iter().all(|&(src, i)| i < if src == Source::Demo { demo.len() } else { online.len() }));
}

#[test]
fn best_of_n_matches_linear_scan_on_random_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior = latent_echo_prior(2);
    let actor = constant_actor(4, 0.0);
    let n = 1000;
    let k = 7;
    let tables: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..k).map(|_| rng.random_range(0..4) as f32 * 0.25).collect())
        .collect();
    let critic = |s: &[f32], a: &[f32]| tables[s[0] as usize][a[0] as usize];
    let s = Tensor::matrix(n, 2, (0..n).flat_map(|i| [i as f32, 0.0]).collect()).unwrap();
    let z = Tensor::matrix(n * k, 4, (0..n * k).flat_map(|r| [(r % k) as f32, 0.0, 0.0, 0.0]).collect()).unwrap();
    let (chunks, idx) = best_of_n_select(&actor, &prior, &critic, &s, &z).unwrap();
    let mut ties = 0;
    for i in 0..n {
        let want = rules::argmax_scan(&tables[i]);
        assert_eq!(idx[i], want);
        assert_eq!(chunks.row(i)[0], want as f32);
        let max = tables[i][want];
        ties += (tables[i].iter().filter(|&&v| v == max).count() > 1) as usize;
    }
    assert!(ties > 100);
}

#[test]
fn best_of_n_examples() {
    let prior = latent_echo_prior(2);
    let actor = constant_actor(4, 0.0);
    let critic = |_: &[f32], a: &[f32]| [0.1f32, 0.9, 0.4][a[0] as usize];
    let s = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
    let z = Tensor::matrix(3, 4, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(best_of_n_select(&actor, &prior, &critic, &s, &z).unwrap().1, vec![1]);
    let z1 = Tensor::matrix(1, 4, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(best_of_n_select(&actor, &prior, &critic, &s, &z1).unwrap().1, vec![0]);
}

fn small_setup(seed: u64) -> (GateWorld, FlowPolicy, DemoDataset) {
    let w = GateWorld::new(GateWorldConfig::default()).unwrap();
    let demos = generate_demos(&w, 6, 0.15, 0.99, seed).unwrap();
    let ds = DemoDataset::new(demos.trajectories, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = FlowPolicy::init(&[32, 32], 5, 4, 2, 2, &mut rng).unwrap();
    (w, prior, ds)
}

fn small_config() -> FinetuneConfig {
    FinetuneConfig {
        k: 4,
        n_q: 2,
        batch_size: 16,
        grad_steps_per_update: 2,
        total_env_steps: 320,
        eval_every: 160,
        eval_episodes: 8,
        actor_hidden: vec![16],
        critic_hidden: vec![16],
        ..FinetuneConfig::default()
    }
}

#[test]
fn zero_budget_run_keeps_initialisation() {
    let (w, prior, ds) = small_setup(0);
    let cfg = FinetuneConfig {
        total_env_steps: 0,
        ..small_config()
    };
    let run = finetune(&w, &prior, &ds, &cfg, 0).unwrap();
    assert_eq!(run.online_transitions, 0);
    assert_eq!(run.env_steps, 0);
    assert!(run.actor.net().layers().last().unwrap().weight.data().iter().all(|&v| v == 0.0));
    assert_eq!(run.critics.online, run.critics.target);
    assert_eq!(run.metrics[0].env_steps, 0);
}

#[test]
fn finetune_is_deterministic_and_leaves_prior_untouched() {
    let (w, prior, ds) = small_setup(1);
    let before = prior.clone();
    let cfg = small_config();
    let a = finetune(&w, &prior, &ds, &cfg, 4).unwrap();
    let b = finetune(&w, &prior, &ds, &cfg, 4).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.actor, b.actor);
    assert_eq!(prior, before);
    assert!(a.env_steps >= cfg.total_env_steps);
    assert!(a.metrics.iter().all(|r| r.critic_loss.is_finite() && r.actor_loss.is_finite()));
}

#[test]
fn degenerate_ablation_arm_runs() {
    let (w, prior, ds) = small_setup(2);
    let cfg = FinetuneConfig {
        k: 1,
        filter_enabled: false,
        best_of_n_enabled: false,
        total_env_steps: 1000,
        ..small_config()
    };
    let run = finetune(&w, &prior, &ds, &cfg, 2).unwrap();
    assert!(run.online_transitions > 0);
}

#[test]
fn zero_residual_without_best_of_n_is_the_prior() {
    let (w, prior, _) = small_setup(3);
    let actor = constant_actor(8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let critics = dice_core::dice_rl::CriticEnsemble::init(2, &[8], 2, 8, &mut rng).unwrap();
    let p = DicePolicy::new(&prior, &actor, &critics, 8, false, dice_core::dice_rl::Reduction::Mean);
    let a = evaluate(&w, &p, 40, 11, None).unwrap();
    let b = evaluate(&w, &DicePolicy::prior_only(&prior), 40, 11, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn latent_bank_matches_prior_samples() {
    let (_, prior, _) = small_setup(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bank = LatentBank::draw(&prior, &[0.1, -0.2], 3, &mut rng).unwrap();
    assert_eq!(bank.candidates(8), 3);
    for k in 0..3 {
        let direct = prior.sample_chunk(&[0.1, -0.2], &bank.z[k * 8..(k + 1) * 8]).unwrap();
        assert_eq!(direct, bank.prior[k * 8..(k + 1) * 8].to_vec());
    }
}
