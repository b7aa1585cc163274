//! Episodic advantage actor-critic with entropy regularization: TD
//! advantages, the combined loss, an SGD-with-momentum loop over sampled
//! episodes, and the entropy-ablation and M-sweep experiment drivers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ConcatRow;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, RankedResult};
use crate::policy::{
    argmax_action, gradients, sample_action, EpisodeForward, LossSpec, PolicyHyper, PolicyModel,
};
use crate::rankenv::{episode_return, reset, EpisodeRecord, RewardParams, StepRecord};

/// Training configuration. `entropy_coef` of zero is the plain-A2C
/// ablation arm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct A2cConfig {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Reward scale for relevant picks.
    pub m: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 1e-3,
            episodes: 3000,
            seed: 0,
            m: 3.0,
        }
    }
}

const MOMENTUM: f64 = 0.9;
const GRAD_CLIP: f64 = 5.0;
const MA_WINDOW: usize = 100;

/// One row per training episode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub episode: usize,
    pub ret: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Moving average of the return over the last 100 episodes; partial
    /// windows from episode 1.
    pub ma100_return: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    fn push(&mut self, episode: usize, ret: f64, actor: f64, critic: f64, entropy: f64) {
        let window_start = self.entries.len().saturating_sub(MA_WINDOW - 1);
        let prior: f64 = self.entries[window_start..].iter().map(|e| e.ret).sum();
        let count = (self.entries.len() - window_start + 1) as f64;
        self.entries.push(TrainLogEntry {
            episode,
            ret,
            actor_loss: actor,
            critic_loss: critic,
            entropy,
            ma100_return: (prior + ret) / count,
        });
    }

    pub fn mean_return(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.entries[range];
        slice.iter().map(|e| e.ret).sum::<f64>() / slice.len() as f64
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "episode,return,actor_loss,critic_loss,entropy,ma100_return")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                e.episode, e.ret, e.actor_loss, e.critic_loss, e.entropy, e.ma100_return
            )?;
        }
        Ok(())
    }
}

/// Candidate rows for the episodes of one report.
pub type EpisodeSource = Vec<ConcatRow>;

/// Roll out one full episode. Sampling follows the policy distribution
/// when `greedy` is false, argmax when true.
pub fn rollout(
    model: &PolicyModel,
    rows: &[ConcatRow],
    params: &RewardParams,
    rng: &mut ChaCha8Rng,
    greedy: bool,
) -> Result<EpisodeRecord> {
    let mut state = reset(rows.to_vec())?;
    let mut forward = EpisodeForward::new(model, rows)?;
    let mut record = EpisodeRecord::default();
    while !state.is_terminal() {
        let out = forward.output(&state)?;
        let action = if greedy {
            argmax_action(&out)
        } else {
            sample_action(&out, rng)
        };
        let t = state.t();
        let hash = state.state_hash();
        let (reward, _) = state.step(action, params)?;
        record.steps.push(StepRecord {
            t,
            state_hash: hash,
            action,
            reward,
            value: out.value,
            log_prob: out.probs[action].ln(),
            entropy: out.entropy,
        });
        forward.advance(rows, action);
    }
    record.ranking = state.picked().to_vec();
    Ok(record)
}

/// One-step TD advantages: `A_t = r_t + gamma * V(s_{t+1}) - V(s_t)`,
/// bootstrapping zero at the terminal state.
pub fn td_advantage(record: &EpisodeRecord, gamma: f64) -> Vec<f64> {
    let values: Vec<f64> = record.steps.iter().map(|s| s.value).collect();
    record
        .steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let next = if t + 1 < values.len() { values[t + 1] } else { 0.0 };
            step.reward + gamma * next - values[t]
        })
        .collect()
}

/// TD targets paired with `td_advantage`.
pub fn td_targets(record: &EpisodeRecord, gamma: f64) -> Vec<f64> {
    let values: Vec<f64> = record.steps.iter().map(|s| s.value).collect();
    record
        .steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let next = if t + 1 < values.len() { values[t + 1] } else { 0.0 };
            step.reward + gamma * next
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cLosses {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Loss values from a recorded episode: actor `-sum(logpi * A)`, critic
/// `sum(A^2)` (the TD target minus the value), entropy bonus `sum(H)`,
/// and `total = actor + value_coef * critic - beta * entropy`.
pub fn a2c_losses(
    record: &EpisodeRecord,
    advantages: &[f64],
    entropy_coef: f64,
    value_coef: f64,
) -> Result<A2cLosses> {
    if record.steps.len() != advantages.len() {
        return Err(Error::Config("advantage length mismatch".into()));
    }
    let mut losses = A2cLosses {
        actor: 0.0,
        critic: 0.0,
        entropy: 0.0,
        total: 0.0,
    };
    for (step, &adv) in record.steps.iter().zip(advantages) {
        losses.actor -= step.log_prob * adv;
        losses.critic += adv * adv;
        losses.entropy += step.entropy;
    }
    losses.total = losses.actor + value_coef * losses.critic - entropy_coef * losses.entropy;
    if !losses.total.is_finite() {
        return Err(Error::Numerics {
            step: 0,
            detail: format!("loss {:?}", losses),
        });
    }
    Ok(losses)
}

struct SgdMomentum {
    velocity: Vec<f64>,
    learning_rate: f64,
}

impl SgdMomentum {
    fn new(n: usize, learning_rate: f64) -> Self {
        SgdMomentum {
            velocity: vec![0.0; n],
            learning_rate,
        }
    }

    fn apply(&mut self, params: &mut [f64], mut grads: Vec<f64>) {
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > GRAD_CLIP {
            let scale = GRAD_CLIP / norm;
            for g in &mut grads {
                *g *= scale;
            }
        }
        for ((v, g), p) in self.velocity.iter_mut().zip(&grads).zip(params) {
            *v = MOMENTUM * *v + g;
            *p -= self.learning_rate * *v;
        }
    }
}

/// Train the policy in place over episodes sampled from the pool.
/// Deterministic for a fixed seed.
pub fn train(
    pool: &[EpisodeSource],
    model: &mut PolicyModel,
    cfg: &A2cConfig,
) -> Result<TrainLog> {
    if pool.is_empty() {
        return Err(Error::NothingToTrain);
    }
    let params = RewardParams { m: cfg.m };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = SgdMomentum::new(model.num_params(), cfg.learning_rate);
    let mut log = TrainLog::default();
    for episode in 0..cfg.episodes {
        let rows = &pool[rng.random_range(0..pool.len())];
        let record = rollout(model, rows, &params, &mut rng, false)?;
        let advantages = td_advantage(&record, cfg.gamma);
        let targets = td_targets(&record, cfg.gamma);
        let losses = a2c_losses(&record, &advantages, cfg.entropy_coef, cfg.value_coef)?;
        let spec = LossSpec {
            advantages: &advantages,
            critic_targets: &targets,
            entropy_coef: cfg.entropy_coef,
            value_coef: cfg.value_coef,
        };
        let grads = gradients(model, rows, &record, &spec)?;
        optimizer.apply(model.params_mut(), grads);
        let mean_entropy = record.steps.iter().map(|s| s.entropy).sum::<f64>()
            / record.steps.len() as f64;
        log.push(
            episode + 1,
            episode_return(&record, 1.0),
            losses.actor,
            losses.critic,
            mean_entropy,
        );
    }
    Ok(log)
}

/// Greedy-rollout relevance vectors for a set of sources.
pub fn greedy_results(
    model: &PolicyModel,
    sources: &[EpisodeSource],
    m: f64,
) -> Result<Vec<RankedResult>> {
    let params = RewardParams { m };
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused under greedy
    sources
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let record = rollout(model, rows, &params, &mut rng, true)?;
            let relevance: Vec<bool> = record.ranking.iter().map(|&a| rows[a].relevant).collect();
            Ok(RankedResult::ranked(format!("source-{i}"), relevance))
        })
        .collect()
}

/// Mean (max - min) probability spread over co-relevant actions on the
/// fresh state of each source, with probabilities renormalized over just
/// those actions so the spread measures their balance rather than their
/// share of total mass.
///
/// Fresh states are the first decision of every episode, so different
/// models are measured on identical, on-policy states. None when no
/// source offers at least two relevant candidates.
pub fn probability_spread(model: &PolicyModel, sources: &[EpisodeSource]) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for rows in sources {
        let state = reset(rows.clone())?;
        let forward = EpisodeForward::new(model, rows)?;
        let out = forward.output(&state)?;
        let rel_probs: Vec<f64> = state
            .available()
            .filter(|&i| rows[i].relevant)
            .map(|i| out.probs[i])
            .collect();
        let mass: f64 = rel_probs.iter().sum();
        if rel_probs.len() >= 2 && mass > 0.0 {
            let max = rel_probs.iter().cloned().fold(f64::MIN, f64::max);
            let min = rel_probs.iter().cloned().fold(f64::MAX, f64::min);
            total += (max - min) / mass;
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// One arm of the entropy ablation.
#[derive(Debug)]
pub struct AblationArm {
    pub entropy_coef: f64,
    pub model: PolicyModel,
    pub log: TrainLog,
    pub eval: EvalReport,
}

#[derive(Debug)]
pub struct EntropyAblation {
    pub without_entropy: AblationArm,
    pub with_entropy: AblationArm,
}

/// Train twice from the same initialization and seed, once with
/// `entropy_coef = 0`, once with the configured coefficient, and evaluate
/// both greedily on the test sources.
pub fn entropy_ablation(
    train_pool: &[EpisodeSource],
    test_pool: &[EpisodeSource],
    hyper: PolicyHyper,
    cfg: &A2cConfig,
) -> Result<EntropyAblation> {
    let run = |entropy_coef: f64| -> Result<AblationArm> {
        let mut model = PolicyModel::init(hyper, cfg.seed);
        let arm_cfg = A2cConfig {
            entropy_coef,
            ..*cfg
        };
        let log = train(train_pool, &mut model, &arm_cfg)?;
        let results = greedy_results(&model, test_pool, cfg.m)?;
        let eval = evaluate(&results, false)?;
        Ok(AblationArm {
            entropy_coef,
            model,
            log,
            eval,
        })
    };
    Ok(EntropyAblation {
        without_entropy: run(0.0)?,
        with_entropy: run(cfg.entropy_coef)?,
    })
}

/// Train one model per reward scale and collect the reward-episode curves.
pub fn m_sweep(
    pool: &[EpisodeSource],
    hyper: PolicyHyper,
    cfg: &A2cConfig,
    ms: &[f64],
) -> Result<Vec<(f64, TrainLog)>> {
    ms.iter()
        .map(|&m| {
            let mut model = PolicyModel::init(hyper, cfg.seed);
            let log = train(pool, &mut model, &A2cConfig { m, ..*cfg })?;
            Ok((m, log))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankenv::pattern_rows;

    fn hyper() -> PolicyHyper {
        PolicyHyper {
            embed_dim: 4,
            k_max: 31,
            conv_channels: 8,
            conv_width: 3,
            memory_units: 8,
            head_hidden: 8,
        }
    }

    fn toy_pool(n_sources: usize, k: usize, seed: u64) -> Vec<EpisodeSource> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sources)
            .map(|_| {
                (0..k)
                    .map(|i| {
                        let relevant = rng.random_bool(0.3);
                        let mut values: Vec<f64> =
                            (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
                        // Plant a learnable signal in the file half.
                        values[4] = if relevant { 0.8 } else { -0.8 };
                        ConcatRow {
                            values,
                            relevant,
                            path: format!("f{i}"),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn td_advantage_hand_example() {
        let record = EpisodeRecord {
            steps: vec![
                StepRecord {
                    t: 1,
                    state_hash: 0,
                    action: 0,
                    reward: 1.0,
                    value: 0.5,
                    log_prob: -0.5,
                    entropy: 0.5,
                },
                StepRecord {
                    t: 2,
                    state_hash: 0,
                    action: 1,
                    reward: -1.0,
                    value: 0.2,
                    log_prob: -0.5,
                    entropy: 0.5,
                },
            ],
            ranking: vec![0, 1],
        };
        let adv = td_advantage(&record, 0.9);
        assert!((adv[0] - 0.68).abs() < 1e-12);
        assert!((adv[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn td_advantage_single_step_bootstraps_zero() {
        let record = EpisodeRecord {
            steps: vec![StepRecord {
                t: 1,
                state_hash: 0,
                action: 0,
                reward: 2.14,
                value: 0.0,
                log_prob: 0.0,
                entropy: 0.0,
            }],
            ranking: vec![0],
        };
        assert_eq!(td_advantage(&record, 0.99), vec![2.14]);
    }

    #[test]
    fn perfect_critic_gives_zero_advantages() {
        // Values equal to the true discounted return under gamma.
        let gamma = 0.9;
        let rewards = [1.0, -0.5, 2.0];
        let mut values = [0.0; 3];
        for t in (0..3).rev() {
            values[t] = rewards[t] + if t + 1 < 3 { gamma * values[t + 1] } else { 0.0 };
        }
        let record = EpisodeRecord {
            steps: (0..3)
                .map(|t| StepRecord {
                    t: t + 1,
                    state_hash: 0,
                    action: t,
                    reward: rewards[t],
                    value: values[t],
                    log_prob: -1.0,
                    entropy: 1.0,
                })
                .collect(),
            ranking: vec![0, 1, 2],
        };
        for a in td_advantage(&record, gamma) {
            assert!(a.abs() < 1e-12);
        }
    }

    #[test]
    fn losses_zero_advantage_cases() {
        let record = EpisodeRecord {
            steps: vec![StepRecord {
                t: 1,
                state_hash: 0,
                action: 0,
                reward: 1.0,
                value: 1.0,
                log_prob: -1.386_294_361_119_890_6, // ln(1/4)
                entropy: 4.0f64.ln(),
            }],
            ranking: vec![0],
        };
        let adv = vec![0.0];
        let losses = a2c_losses(&record, &adv, 0.0, 0.5).unwrap();
        assert_eq!(losses.actor, 0.0);
        assert_eq!(losses.total, 0.5 * losses.critic);
        // Uniform over 4 actions: entropy ln 4.
        assert!((losses.entropy - 1.386).abs() < 1e-3);
    }

    #[test]
    fn beta_zero_total_ignores_entropy() {
        let record = EpisodeRecord {
            steps: vec![StepRecord {
                t: 1,
                state_hash: 0,
                action: 0,
                reward: 1.0,
                value: 0.5,
                log_prob: -0.7,
                entropy: 1.2,
            }],
            ranking: vec![0],
        };
        let adv = td_advantage(&record, 1.0);
        let without = a2c_losses(&record, &adv, 0.0, 0.5).unwrap();
        let with = a2c_losses(&record, &adv, 0.05, 0.5).unwrap();
        assert_eq!(without.actor, with.actor);
        assert_eq!(without.critic, with.critic);
        assert!((without.total - (with.total + 0.05 * with.entropy)).abs() < 1e-12);
    }

    #[test]
    fn total_strictly_decreasing_in_beta() {
        let record = EpisodeRecord {
            steps: vec![StepRecord {
                t: 1,
                state_hash: 0,
                action: 0,
                reward: 1.0,
                value: 0.5,
                log_prob: -0.7,
                entropy: 0.9,
            }],
            ranking: vec![0],
        };
        let adv = td_advantage(&record, 1.0);
        let mut last = f64::INFINITY;
        for beta in [0.0, 0.01, 0.05, 0.2] {
            let total = a2c_losses(&record, &adv, beta, 0.5).unwrap().total;
            assert!(total < last);
            last = total;
        }
    }

    #[test]
    fn train_is_deterministic() {
        let pool = toy_pool(4, 5, 1);
        let cfg = A2cConfig {
            episodes: 30,
            seed: 42,
            ..A2cConfig::default()
        };
        let mut m1 = PolicyModel::init(hyper(), 7);
        let mut m2 = PolicyModel::init(hyper(), 7);
        let l1 = train(&pool, &mut m1, &cfg).unwrap();
        let l2 = train(&pool, &mut m2, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params());
        let csv = |log: &TrainLog| {
            let mut buf = Vec::new();
            log.to_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&l1), csv(&l2));
    }

    #[test]
    fn empty_pool_rejected() {
        let mut model = PolicyModel::init(hyper(), 0);
        assert!(matches!(
            train(&[], &mut model, &A2cConfig::default()),
            Err(Error::NothingToTrain)
        ));
    }

    #[test]
    fn training_improves_toy_ranking() {
        let pool = toy_pool(6, 6, 3);
        let cfg = A2cConfig {
            episodes: 1000,
            seed: 5,
            learning_rate: 5e-3,
            ..A2cConfig::default()
        };
        let mut model = PolicyModel::init(hyper(), 11);
        let before = evaluate(&greedy_results(&model, &pool, cfg.m).unwrap(), false).unwrap();
        train(&pool, &mut model, &cfg).unwrap();
        let after = evaluate(&greedy_results(&model, &pool, cfg.m).unwrap(), false).unwrap();
        assert!(
            after.mrr > before.mrr + 0.1,
            "greedy MRR did not improve: {} -> {}",
            before.mrr,
            after.mrr
        );
        assert!(after.map > before.map, "MAP fell: {} -> {}", before.map, after.map);
    }

    #[test]
    fn no_masked_action_sampled_in_rollouts() {
        let pool = toy_pool(3, 7, 9);
        let model = PolicyModel::init(hyper(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for rows in &pool {
            for _ in 0..20 {
                let record =
                    rollout(&model, rows, &RewardParams::default(), &mut rng, false).unwrap();
                let mut seen = std::collections::HashSet::new();
                for step in &record.steps {
                    assert!(seen.insert(step.action), "action repeated");
                }
                assert_eq!(seen.len(), rows.len());
            }
        }
    }

    #[test]
    fn critic_only_training_reduces_critic_loss() {
        // Gradient steps restricted to the value-head segments, on a
        // frozen random policy.
        let pool = toy_pool(4, 5, 13);
        let mut deltas = Vec::new();
        for seed in 0..3u64 {
            let mut model = PolicyModel::init(hyper(), 20 + seed);
            let seg = model.segments().clone();
            let value_ranges = [
                seg.value_w1.clone(),
                seg.value_b1.clone(),
                seg.value_w2.clone(),
                seg.value_b2.clone(),
            ];
            let cfg = A2cConfig {
                episodes: 300,
                seed,
                learning_rate: 1e-3,
                entropy_coef: 0.0,
                ..A2cConfig::default()
            };
            let params = RewardParams { m: cfg.m };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut optimizer = SgdMomentum::new(model.num_params(), cfg.learning_rate);
            let mut critic_losses = Vec::new();
            for _ in 0..cfg.episodes {
                let rows = &pool[rng.random_range(0..pool.len())];
                let record = rollout(&model, rows, &params, &mut rng, false).unwrap();
                let advantages = td_advantage(&record, cfg.gamma);
                let targets = td_targets(&record, cfg.gamma);
                let losses =
                    a2c_losses(&record, &advantages, cfg.entropy_coef, cfg.value_coef).unwrap();
                critic_losses.push(losses.critic);
                let spec = LossSpec {
                    advantages: &advantages,
                    critic_targets: &targets,
                    entropy_coef: 0.0,
                    value_coef: cfg.value_coef,
                };
                let mut grads = gradients(&model, rows, &record, &spec).unwrap();
                for (i, g) in grads.iter_mut().enumerate() {
                    if !value_ranges.iter().any(|r| r.contains(&i)) {
                        *g = 0.0;
                    }
                }
                optimizer.apply(model.params_mut(), grads);
            }
            let head: f64 = critic_losses[..30].iter().sum::<f64>() / 30.0;
            let tail: f64 = critic_losses[critic_losses.len() - 30..].iter().sum::<f64>() / 30.0;
            deltas.push(head - tail);
        }
        let mean_drop: f64 = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(mean_drop > 0.0, "critic loss did not fall: {deltas:?}");
    }

    #[test]
    fn ablation_arms_share_schedule_and_differ_only_in_beta() {
        let pool = toy_pool(4, 5, 21);
        let cfg = A2cConfig {
            episodes: 40,
            seed: 77,
            ..A2cConfig::default()
        };
        let ablation = entropy_ablation(&pool, &pool, hyper(), &cfg).unwrap();
        assert_eq!(ablation.without_entropy.entropy_coef, 0.0);
        assert_eq!(ablation.with_entropy.entropy_coef, cfg.entropy_coef);
        assert_eq!(
            ablation.without_entropy.log.entries.len(),
            ablation.with_entropy.log.entries.len()
        );
    }

    #[test]
    fn m_sweep_emits_one_curve_per_value() {
        let pool = toy_pool(3, 4, 22);
        let cfg = A2cConfig {
            episodes: 15,
            seed: 3,
            ..A2cConfig::default()
        };
        let curves = m_sweep(&pool, hyper(), &cfg, &[1.0, 3.0, 6.0, 9.0]).unwrap();
        assert_eq!(curves.len(), 4);
        for (_, log) in &curves {
            assert_eq!(log.entries.len(), 15);
        }
    }

    #[test]
    fn moving_average_partial_windows() {
        let mut log = TrainLog::default();
        log.push(1, 1.0, 0.0, 0.0, 0.0);
        log.push(2, 3.0, 0.0, 0.0, 0.0);
        assert_eq!(log.entries[0].ma100_return, 1.0);
        assert_eq!(log.entries[1].ma100_return, 2.0);
    }

    #[test]
    fn greedy_results_are_permutations() {
        let pool = toy_pool(3, 6, 23);
        let model = PolicyModel::init(hyper(), 4);
        let results = greedy_results(&model, &pool, 3.0).unwrap();
        assert_eq!(results.len(), 3);
        for (result, rows) in results.iter().zip(&pool) {
            assert_eq!(result.relevance.len(), rows.len());
        }
    }

    #[test]
    fn probability_spread_requires_multi_relevant_states() {
        let model = PolicyModel::init(hyper(), 4);
        let single: Vec<EpisodeSource> = vec![pattern_rows(&[true, false])
            .into_iter()
            .map(|mut r| {
                r.values = vec![0.0; 8];
                r
            })
            .collect()];
        assert_eq!(probability_spread(&model, &single).unwrap(), None);

        let multi: Vec<EpisodeSource> = vec![pattern_rows(&[true, true, false])
            .into_iter()
            .map(|mut r| {
                r.values = vec![0.1; 8];
                r
            })
            .collect()];
        assert!(probability_spread(&model, &multi).unwrap().is_some());
    }
}
