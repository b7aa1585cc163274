//! The reranking MDP: each episode moves every shortlisted file from the
//! candidate list to the ranked list, one pick per step. Relevant picks
//! earn `M / (log2(t+1) * distance)`, irrelevant picks cost `log2(t+1)`,
//! where `distance` is the mean gap between consecutive relevant picks so
//! far.

use std::io::Write;

use serde::Serialize;

use crate::encoder::ConcatRow;
use crate::error::{Error, Result};

/// Cap on the action space, and so on episode length.
pub const MAX_ACTIONS: usize = 31;

/// Reward shape parameters. Relevance is binary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub m: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { m: 3.0 }
    }
}

/// MDP state: the fixed candidate rows plus the ranked list built so far.
#[derive(Debug, Clone)]
pub struct RankState {
    rows: Vec<ConcatRow>,
    picked: Vec<usize>,
    mask: Vec<bool>,
}

impl RankState {
    pub fn rows(&self) -> &[ConcatRow] {
        &self.rows
    }

    /// Actions taken so far, in rank order.
    pub fn picked(&self) -> &[usize] {
        &self.picked
    }

    /// `mask[i]` is true while row `i` is still available.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// 1-based timestep of the next action.
    pub fn t(&self) -> usize {
        self.picked.len() + 1
    }

    pub fn num_actions(&self) -> usize {
        self.rows.len()
    }

    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn is_terminal(&self) -> bool {
        self.picked.len() == self.rows.len()
    }

    /// FNV over the pick sequence; identifies states for debugging.
    pub fn state_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.rows.len() as u64;
        for &a in &self.picked {
            h ^= a as u64 + 1;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    /// Mean gap between consecutive relevant picks in the current ranked
    /// list. Fewer than two relevant picks, or a zero mean (a consecutive
    /// run), yields 1.
    pub fn distance(&self) -> f64 {
        let positions: Vec<usize> = self
            .picked
            .iter()
            .enumerate()
            .filter(|&(_, &a)| self.rows[a].relevant)
            .map(|(rank0, _)| rank0 + 1)
            .collect();
        if positions.len() < 2 {
            return 1.0;
        }
        let gaps: Vec<f64> = positions
            .windows(2)
            .map(|w| (w[1] - w[0] - 1) as f64)
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean == 0.0 {
            1.0
        } else {
            mean
        }
    }

    /// Apply one pick. Returns the reward and whether the episode ended.
    /// Picking a masked or out-of-range action is a hard error; the
    /// policy's masking is supposed to make that impossible.
    pub fn step(&mut self, action: usize, params: &RewardParams) -> Result<(f64, bool)> {
        if action >= self.rows.len() || !self.mask[action] {
            return Err(Error::IllegalAction { action });
        }
        self.picked.push(action);
        self.mask[action] = false;
        let t = self.picked.len() as f64;
        let reward = if self.rows[action].relevant {
            params.m / ((t + 1.0).log2() * self.distance())
        } else {
            -(t + 1.0).log2()
        };
        Ok((reward, self.is_terminal()))
    }
}

/// Fresh state over the given candidate rows: nothing picked, all
/// actions available. Short candidate sets shrink the episode; rows are
/// never padded.
pub fn reset(rows: Vec<ConcatRow>) -> Result<RankState> {
    if rows.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    if rows.len() > MAX_ACTIONS {
        return Err(Error::Config(format!(
            "{} candidate rows exceed the action cap {MAX_ACTIONS}",
            rows.len()
        )));
    }
    let mask = vec![true; rows.len()];
    Ok(RankState {
        rows,
        picked: Vec::new(),
        mask,
    })
}

/// Everything recorded about one step during a rollout.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub state_hash: u64,
    pub action: usize,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub entropy: f64,
}

/// A complete episode trace plus the final ranked permutation.
#[derive(Debug, Clone, Default)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub ranking: Vec<usize>,
}

impl EpisodeRecord {
    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// One step per JSONL line: t, action, reward, value, logprob.
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line {
            t: usize,
            action: usize,
            reward: f64,
            value: f64,
            logprob: f64,
        }
        for step in &self.steps {
            let line = Line {
                t: step.t,
                action: step.action,
                reward: step.reward,
                value: step.value,
                logprob: step.log_prob,
            };
            serde_json::to_writer(&mut w, &line)
                .map_err(|e| Error::Format(format!("episode dump: {e}")))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Discounted episode return; gamma = 1 gives the per-episode reward
/// plotted in training curves.
pub fn episode_return(record: &EpisodeRecord, gamma: f64) -> f64 {
    record
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| gamma.powi(i as i32) * s.reward)
        .sum()
}

/// Rows with the given relevance pattern and placeholder embeddings;
/// reward computations ignore the embedding values.
pub fn pattern_rows(pattern: &[bool]) -> Vec<ConcatRow> {
    pattern
        .iter()
        .enumerate()
        .map(|(i, &relevant)| ConcatRow {
            values: vec![0.0; 2],
            relevant,
            path: format!("row{i}"),
        })
        .collect()
}

/// Undiscounted return of picking rows with relevance `pattern` in order.
pub fn pattern_return(pattern: &[bool], params: &RewardParams) -> f64 {
    let mut state = reset(pattern_rows(pattern)).expect("non-empty pattern");
    let mut total = 0.0;
    for action in 0..pattern.len() {
        let (reward, _) = state.step(action, params).expect("in-order picks are legal");
        total += reward;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> RewardParams {
        RewardParams::default()
    }

    #[test]
    fn reset_full_and_small() {
        let state = reset(pattern_rows(&[false; 31])).unwrap();
        assert_eq!(state.num_actions(), 31);
        assert_eq!(state.available().count(), 31);
        assert_eq!(state.t(), 1);

        let state = reset(pattern_rows(&[true; 5])).unwrap();
        assert_eq!(state.num_actions(), 5);
    }

    #[test]
    fn reset_rejects_empty_and_oversized() {
        assert!(matches!(reset(vec![]), Err(Error::EmptyEpisode)));
        assert!(matches!(
            reset(pattern_rows(&[false; 32])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reset_is_deterministic() {
        let rows = pattern_rows(&[true, false, true]);
        let a = reset(rows.clone()).unwrap();
        let b = reset(rows).unwrap();
        assert_eq!(a.picked(), b.picked());
        assert_eq!(a.mask(), b.mask());
    }

    #[test]
    fn distance_worked_example() {
        // Relevancy so far <0,0,1,0,1,1>: positions <3,5,6>, gaps <1,0>.
        let mut state = reset(pattern_rows(&[false, false, true, false, true, true])).unwrap();
        for action in 0..6 {
            state.step(action, &params()).unwrap();
        }
        assert_eq!(state.distance(), 0.5);
    }

    #[test]
    fn distance_consecutive_run_is_one() {
        let mut state = reset(pattern_rows(&[true, true, false])).unwrap();
        state.step(0, &params()).unwrap();
        state.step(1, &params()).unwrap();
        assert_eq!(state.distance(), 1.0);
    }

    #[test]
    fn distance_single_relevant_is_one() {
        let mut state = reset(pattern_rows(&[true, false])).unwrap();
        state.step(0, &params()).unwrap();
        assert_eq!(state.distance(), 1.0);
    }

    #[test]
    fn reward_worked_example_2_14() {
        let mut state = reset(pattern_rows(&[false, false, true, false, true, true])).unwrap();
        let mut last = 0.0;
        for action in 0..6 {
            let (reward, done) = state.step(action, &params()).unwrap();
            last = reward;
            assert_eq!(done, action == 5);
        }
        // M * 1 / (log2(7) * 0.5)
        assert!((last - 2.14).abs() < 0.01, "reward {last}");
    }

    #[test]
    fn reward_first_pick_cases() {
        let mut state = reset(pattern_rows(&[true, false])).unwrap();
        let (reward, _) = state.step(0, &params()).unwrap();
        assert!((reward - 3.0).abs() < 1e-12);

        let mut state = reset(pattern_rows(&[false, true])).unwrap();
        let (reward, _) = state.step(0, &params()).unwrap();
        assert!((reward + 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_action_is_hard_error() {
        let mut state = reset(pattern_rows(&[true, false])).unwrap();
        state.step(0, &params()).unwrap();
        assert!(matches!(
            state.step(0, &params()),
            Err(Error::IllegalAction { action: 0 })
        ));
        assert!(matches!(
            state.step(9, &params()),
            Err(Error::IllegalAction { action: 9 })
        ));
    }

    #[test]
    fn reward_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(1..=8);
            let pattern: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
            let mut state = reset(pattern_rows(&pattern)).unwrap();
            for action in 0..k {
                let relevant = pattern[action];
                let (reward, _) = state.step(action, &params()).unwrap();
                if relevant {
                    assert!(reward > 0.0);
                } else {
                    assert!(reward < 0.0);
                }
            }
        }
    }

    #[test]
    fn full_episode_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let k = rng.random_range(1..=MAX_ACTIONS);
            let pattern: Vec<bool> = (0..k).map(|_| rng.random_bool(0.3)).collect();
            let mut state = reset(pattern_rows(&pattern)).unwrap();
            while !state.is_terminal() {
                let avail: Vec<usize> = state.available().collect();
                let action = avail[rng.random_range(0..avail.len())];
                state.step(action, &params()).unwrap();
            }
            let mut seen = state.picked().to_vec();
            seen.sort_unstable();
            assert_eq!(seen, (0..k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn episode_return_examples() {
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
        assert_eq!(episode_return(&record, 1.0), 2.14);

        // Three all-irrelevant steps: -(log2 2 + log2 3 + log2 4)
        let ret = pattern_return(&[false, false, false], &params());
        assert!((ret + 4.585).abs() < 1e-3, "return {ret}");

        let record = EpisodeRecord {
            steps: [1.0, -0.5, 0.25]
                .iter()
                .enumerate()
                .map(|(i, &reward)| StepRecord {
                    t: i + 1,
                    state_hash: 0,
                    action: i,
                    reward,
                    value: 0.0,
                    log_prob: 0.0,
                    entropy: 0.0,
                })
                .collect(),
            ranking: vec![0, 1, 2],
        };
        assert_eq!(episode_return(&record, 0.0), 1.0);
    }

    #[test]
    fn jsonl_dump_has_expected_fields() {
        let record = EpisodeRecord {
            steps: vec![StepRecord {
                t: 1,
                state_hash: 7,
                action: 2,
                reward: -1.0,
                value: 0.5,
                log_prob: -1.1,
                entropy: 0.9,
            }],
            ranking: vec![2],
        };
        let mut buf = Vec::new();
        record.dump_jsonl(&mut buf).unwrap();
        let line: serde_json::Value = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        assert_eq!(line["t"], 1);
        assert_eq!(line["action"], 2);
        assert!(line.get("logprob").is_some());
        assert!(line.get("state_hash").is_none());
    }
}
