use ndarray::Array2;
use rand::seq::SliceRandom;

use super::common::{
    check_agent, check_algorithm, check_observations, combine_checksums, is_numeric_abort, obs_matrix, state_dim,
    LearnerRngs,
};
use super::{
    compute_gae, critic_regression, ppo_actor_loss, ActionChoice, AlgoError, Algorithm, Hyperparams, MultiAgentLearner,
    Transition, UpdateStats,
};
use crate::market::{AgentObservation, OBS_DIM};
use crate::nn::{param_checksum, Activation, AdamState, GaussianPolicy, Mlp, NetworkRecord, NetworkSet, NnError};

struct RolloutStep {
    state: Vec<f64>,
    observations: Vec<AgentObservation>,
    pre_tanh: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    next_state: Vec<f64>,
    done: bool,
}

/// Decentralized Gaussian actors with a shared centralized value function
/// (one output head per agent), updated once per episode with clipped PPO.
pub struct Mappo {
    hyper: Hyperparams,
    n_agents: usize,
    actors: Vec<GaussianPolicy>,
    actor_opts: Vec<AdamState>,
    value: Mlp,
    value_opt: AdamState,
    rollout: Vec<RolloutStep>,
    rngs: LearnerRngs,
}

impl Mappo {
    pub fn new(hyper: Hyperparams, n_agents: usize, seed: u64) -> Result<Self, AlgoError> {
        let mut rngs = LearnerRngs::new(seed);
        let actors = (0..n_agents)
            .map(|_| GaussianPolicy::new(OBS_DIM, 1, hyper.actor_hidden, &mut rngs.init))
            .collect::<Result<Vec<_>, _>>()?;
        let value = Mlp::with_sizes(
            &[state_dim(n_agents), hyper.value_hidden, hyper.value_hidden, n_agents],
            Activation::Tanh,
            Activation::Linear,
            &mut rngs.init,
        )?;
        Ok(Self {
            actor_opts: actors.iter().map(AdamState::new).collect(),
            value_opt: AdamState::new(&value),
            actors,
            value,
            hyper,
            n_agents,
            rollout: Vec::new(),
            rngs,
        })
    }

    pub fn actor(&self, agent: usize) -> &GaussianPolicy {
        &self.actors[agent]
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value
    }

    fn update(&mut self) -> Result<UpdateStats, AlgoError> {
        let mut stats = UpdateStats::default();
        let steps = std::mem::take(&mut self.rollout);
        let t_len = steps.len();
        let n = self.n_agents;
        let sd = state_dim(n);

        let mut states = Array2::zeros((t_len, sd));
        for (t, s) in steps.iter().enumerate() {
            states.row_mut(t).assign(&ndarray::ArrayView1::from(&s.state));
        }
        let values = self.value.forward_batch(states.view())?;
        let last = steps.last().expect("non-empty rollout");
        let bootstrap = if last.done {
            vec![0.0; n]
        } else {
            self.value.forward(&last.next_state)?
        };

        let mut advantages = Array2::zeros((t_len, n));
        let mut returns = Array2::zeros((t_len, n));
        for i in 0..n {
            let rewards: Vec<f64> = steps.iter().map(|s| s.rewards[i]).collect();
            let mut v: Vec<f64> = values.column(i).to_vec();
            v.push(bootstrap[i]);
            let (adv, ret) = compute_gae(&rewards, &v, self.hyper.gamma, self.hyper.gae_lambda)?;
            let adv = normalize(&adv);
            for t in 0..t_len {
                advantages[[t, i]] = adv[t];
                returns[[t, i]] = ret[t];
            }
        }

        let mut order: Vec<usize> = (0..t_len).collect();
        for _ in 0..self.hyper.ppo_epochs {
            order.shuffle(&mut self.rngs.updates);
            for chunk in order.chunks(self.hyper.minibatch_size) {
                let b = chunk.len();
                let mut actor_loss = 0.0;
                let mut entropy = 0.0;
                let mut aborted = false;
                for i in 0..n {
                    let obs: Vec<AgentObservation> = chunk.iter().map(|&t| steps[t].observations[i]).collect();
                    let obs = obs_matrix(&obs);
                    let pre = Array2::from_shape_fn((b, 1), |(r, _)| steps[chunk[r]].pre_tanh[i]);
                    let old: Vec<f64> = chunk.iter().map(|&t| steps[t].log_probs[i]).collect();
                    let adv: Vec<f64> = chunk.iter().map(|&t| advantages[[t, i]]).collect();
                    let outcome = ppo_actor_loss(
                        &self.actors[i],
                        obs.view(),
                        pre.view(),
                        &old,
                        &adv,
                        self.hyper.clip_epsilon,
                    )
                    .and_then(|(loss, grads, s)| {
                        self.actor_opts[i].step(&mut self.actors[i], &grads, self.hyper.learning_rate)?;
                        Ok((loss, s))
                    });
                    match outcome {
                        Ok((loss, s)) => {
                            self.actors[i].head.clamp();
                            actor_loss += loss / n as f64;
                            entropy += s.entropy / n as f64;
                        }
                        Err(e) if is_numeric_abort(&e) => aborted = true,
                        Err(e) => return Err(e.into()),
                    }
                }

                let batch_states = Array2::from_shape_fn((b, sd), |(r, c)| states[[chunk[r], c]]);
                let targets = Array2::from_shape_fn((b, n), |(r, c)| returns[[chunk[r], c]]);
                let value_outcome =
                    critic_regression(&self.value, batch_states, targets.view()).and_then(|(loss, grads)| {
                        self.value_opt.step(&mut self.value, &grads, self.hyper.learning_rate)?;
                        Ok(loss)
                    });
                let value_loss = match value_outcome {
                    Ok(l) => l,
                    Err(e) if is_numeric_abort(&e) => {
                        aborted = true;
                        f64::NAN
                    }
                    Err(e) => return Err(e.into()),
                };
                if aborted {
                    stats.aborted += 1;
                } else {
                    stats.record(actor_loss, value_loss);
                    stats.record_entropy(entropy);
                }
            }
        }
        Ok(stats)
    }
}

fn normalize(x: &[f64]) -> Vec<f64> {
    if x.len() < 2 {
        return x.to_vec();
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    let sd = var.sqrt() + 1e-8;
    x.iter().map(|v| (v - mean) / sd).collect()
}

impl MultiAgentLearner for Mappo {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Mappo
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn explore(&mut self, observations: &[AgentObservation]) -> Result<ActionChoice, AlgoError> {
        check_observations(observations, self.n_agents)?;
        let mut actions = Vec::with_capacity(self.n_agents);
        let mut pre_tanh = Vec::with_capacity(self.n_agents);
        let mut log_probs = Vec::with_capacity(self.n_agents);
        for (actor, obs) in self.actors.iter().zip(observations) {
            let s = actor.sample(obs.as_slice(), &mut self.rngs.actions)?;
            actions.push(s.action[0]);
            pre_tanh.push(s.pre_tanh[0]);
            log_probs.push(s.log_prob);
        }
        Ok(ActionChoice {
            actions,
            pre_tanh: Some(pre_tanh),
            log_probs: Some(log_probs),
        })
    }

    fn act_deterministic(&self, agent: usize, observation: &AgentObservation) -> Result<f64, AlgoError> {
        check_agent(agent, self.n_agents)?;
        Ok(self.actors[agent].deterministic(observation.as_slice())?[0])
    }

    fn record(&mut self, transition: Transition, choice: &ActionChoice) -> Result<UpdateStats, AlgoError> {
        let (Some(pre_tanh), Some(log_probs)) = (&choice.pre_tanh, &choice.log_probs) else {
            return Err(AlgoError::Length(
                "MAPPO needs pre-squash samples and log-probabilities".into(),
            ));
        };
        if transition.rewards.len() != self.n_agents || pre_tanh.len() != self.n_agents {
            return Err(AlgoError::Length(format!(
                "expected {} agents in transition",
                self.n_agents
            )));
        }
        self.rollout.push(RolloutStep {
            state: transition.state,
            observations: transition.observations,
            pre_tanh: pre_tanh.clone(),
            log_probs: log_probs.clone(),
            rewards: transition.rewards,
            next_state: transition.next_state,
            done: transition.done,
        });
        Ok(UpdateStats::default())
    }

    fn end_episode(&mut self) -> Result<UpdateStats, AlgoError> {
        if self.rollout.is_empty() {
            return Ok(UpdateStats {
                skipped: 1,
                ..Default::default()
            });
        }
        self.update()
    }

    fn checkpoint(&self, episode: usize) -> NetworkSet {
        let mut set = NetworkSet::new(Algorithm::Mappo.name(), episode);
        for (i, a) in self.actors.iter().enumerate() {
            set.networks.push(NetworkRecord::from_policy(format!("actor_{i}"), a));
        }
        set.networks.push(NetworkRecord::from_mlp("value", &self.value));
        set
    }

    fn restore(&mut self, checkpoint: &NetworkSet) -> Result<(), AlgoError> {
        check_algorithm(checkpoint, Algorithm::Mappo.name())?;
        let mut actors = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            actors.push(checkpoint.get(&format!("actor_{i}"))?.to_policy()?);
        }
        let value = checkpoint.get("value")?.to_mlp()?;
        if value.in_dim() != self.value.in_dim() || value.out_dim() != self.value.out_dim() {
            return Err(AlgoError::Nn(NnError::Checkpoint(
                "value network shape mismatch".into(),
            )));
        }
        self.actor_opts = actors.iter().map(AdamState::new).collect();
        self.value_opt = AdamState::new(&value);
        self.actors = actors;
        self.value = value;
        Ok(())
    }

    fn param_checksum(&self) -> u64 {
        combine_checksums(
            self.actors
                .iter()
                .map(param_checksum)
                .chain(std::iter::once(param_checksum(&self.value))),
        )
    }

    fn replay_len(&self) -> usize {
        0
    }
}
