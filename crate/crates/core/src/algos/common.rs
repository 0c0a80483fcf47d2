use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, streams, AlgoError, ReplayBuffer, Transition};
use crate::market::{AgentObservation, OBS_DIM};
use crate::nn::{NetworkSet, NnError};

/// Global state: every observation block plus last shares.
pub(crate) fn state_dim(n_agents: usize) -> usize {
    n_agents * OBS_DIM + n_agents
}

pub(crate) struct LearnerRngs {
    pub init: ChaCha8Rng,
    pub actions: ChaCha8Rng,
    pub updates: ChaCha8Rng,
}

impl LearnerRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            init: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::INIT)),
            actions: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::ACTIONS)),
            updates: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::UPDATES)),
        }
    }
}

/// Minibatch laid out as matrices, one row per sampled transition.
pub(crate) struct Batch {
    pub states: Array2<f64>,
    pub next_states: Array2<f64>,
    pub obs: Vec<Array2<f64>>,
    pub next_obs: Vec<Array2<f64>>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn gather(buffer: &ReplayBuffer<Transition>, indices: &[usize], n_agents: usize) -> Result<Self, AlgoError> {
        let b = indices.len();
        let sd = state_dim(n_agents);
        let mut states = Array2::zeros((b, sd));
        let mut next_states = Array2::zeros((b, sd));
        let mut obs = vec![Array2::zeros((b, OBS_DIM)); n_agents];
        let mut next_obs = vec![Array2::zeros((b, OBS_DIM)); n_agents];
        let mut actions = Array2::zeros((b, n_agents));
        let mut rewards = Array2::zeros((b, n_agents));
        let mut done = Vec::with_capacity(b);
        for (row, &idx) in indices.iter().enumerate() {
            let t = buffer.get(idx);
            if t.state.len() != sd
                || t.next_state.len() != sd
                || t.actions.len() != n_agents
                || t.rewards.len() != n_agents
                || t.observations.len() != n_agents
                || t.next_observations.len() != n_agents
            {
                return Err(AlgoError::Length(format!(
                    "transition does not match {n_agents} agents / state dim {sd}"
                )));
            }
            states.row_mut(row).assign(&ndarray::ArrayView1::from(&t.state));
            next_states
                .row_mut(row)
                .assign(&ndarray::ArrayView1::from(&t.next_state));
            for j in 0..n_agents {
                obs[j]
                    .row_mut(row)
                    .assign(&ndarray::ArrayView1::from(t.observations[j].as_slice()));
                next_obs[j]
                    .row_mut(row)
                    .assign(&ndarray::ArrayView1::from(t.next_observations[j].as_slice()));
                actions[[row, j]] = t.actions[j];
                rewards[[row, j]] = t.rewards[j];
            }
            done.push(t.done);
        }
        Ok(Self {
            states,
            next_states,
            obs,
            next_obs,
            actions,
            rewards,
            done,
        })
    }
}

pub(crate) fn hstack(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, AlgoError> {
    concatenate(Axis(1), &[a.view(), b.view()]).map_err(|e| AlgoError::Length(e.to_string()))
}

pub(crate) fn obs_matrix(observations: &[AgentObservation]) -> Array2<f64> {
    let mut m = Array2::zeros((observations.len(), OBS_DIM));
    for (i, o) in observations.iter().enumerate() {
        m.row_mut(i).assign(&ndarray::ArrayView1::from(o.as_slice()));
    }
    m
}

pub(crate) fn combine_checksums(parts: impl IntoIterator<Item = u64>) -> u64 {
    parts.into_iter().fold(0xcbf2_9ce4_8422_2325u64, |h, c| {
        (h ^ c).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17)
    })
}

pub(crate) fn check_agent(agent: usize, n_agents: usize) -> Result<(), AlgoError> {
    if agent >= n_agents {
        return Err(AlgoError::Length(format!(
            "agent {agent} out of range for {n_agents} agents"
        )));
    }
    Ok(())
}

pub(crate) fn check_observations(observations: &[AgentObservation], n_agents: usize) -> Result<(), AlgoError> {
    if observations.len() != n_agents {
        return Err(AlgoError::Length(format!(
            "expected {n_agents} observations, got {}",
            observations.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_algorithm(set: &NetworkSet, expected: &str) -> Result<(), AlgoError> {
    if set.algorithm != expected {
        return Err(AlgoError::Checkpoint(format!(
            "checkpoint is for '{}', learner is '{expected}'",
            set.algorithm
        )));
    }
    Ok(())
}

/// Non-finite losses or gradients abort the update instead of corrupting
/// parameters; everything else is a real error.
pub(crate) fn is_numeric_abort(e: &NnError) -> bool {
    matches!(e, NnError::NonFinite(_))
}
