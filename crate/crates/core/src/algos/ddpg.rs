use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal};

use super::common::{
    check_agent, check_algorithm, check_observations, combine_checksums, hstack, is_numeric_abort, state_dim, Batch,
    LearnerRngs,
};
use super::{
    critic_regression, ddpg_actor_loss, ddpg_critic_target, ActionChoice, AlgoError, Algorithm, Hyperparams,
    MultiAgentLearner, ReplayBuffer, Transition, UpdateStats,
};
use crate::market::{AgentObservation, OBS_DIM};
use crate::nn::{param_checksum, soft_update, Activation, AdamState, Mlp, NetworkRecord, NetworkSet, NnError};

/// Deterministic actors with per-agent critics and target networks.
///
/// With `centralized` set (MADDPG) each critic sees the global state and the
/// joint action; otherwise (IDDPG) it sees only its agent's observation and
/// action.
pub struct Ddpg {
    hyper: Hyperparams,
    n_agents: usize,
    centralized: bool,
    actors: Vec<Mlp>,
    actor_targets: Vec<Mlp>,
    actor_opts: Vec<AdamState>,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    critic_opts: Vec<AdamState>,
    buffer: ReplayBuffer<Transition>,
    rngs: LearnerRngs,
}

pub(crate) fn deterministic_actor<R: rand::Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Mlp, NnError> {
    let mut actor = Mlp::with_sizes(&[OBS_DIM, hidden, hidden, 1], Activation::Tanh, Activation::Tanh, rng)?;
    actor.scale_output_layer(0.01);
    Ok(actor)
}

pub(crate) fn critic<R: rand::Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Result<Mlp, NnError> {
    Mlp::with_sizes(&[in_dim, hidden, hidden, 1], Activation::Relu, Activation::Linear, rng)
}

impl Ddpg {
    pub fn new(hyper: Hyperparams, n_agents: usize, centralized: bool, seed: u64) -> Result<Self, AlgoError> {
        let mut rngs = LearnerRngs::new(seed);
        let critic_in = if centralized {
            state_dim(n_agents) + n_agents
        } else {
            OBS_DIM + 1
        };
        let mut actors = Vec::with_capacity(n_agents);
        let mut critics = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            actors.push(deterministic_actor(hyper.actor_hidden, &mut rngs.init)?);
            critics.push(critic(critic_in, hyper.critic_hidden, &mut rngs.init)?);
        }
        Ok(Self {
            actor_targets: actors.clone(),
            critic_targets: critics.clone(),
            actor_opts: actors.iter().map(AdamState::new).collect(),
            critic_opts: critics.iter().map(AdamState::new).collect(),
            actors,
            critics,
            buffer: ReplayBuffer::new(hyper.buffer_capacity),
            hyper,
            n_agents,
            centralized,
            rngs,
        })
    }

    pub fn actor(&self, agent: usize) -> &Mlp {
        &self.actors[agent]
    }

    pub fn critic(&self, agent: usize) -> &Mlp {
        &self.critics[agent]
    }

    fn name(&self) -> &'static str {
        if self.centralized {
            Algorithm::Maddpg.name()
        } else {
            Algorithm::Iddpg.name()
        }
    }

    fn critic_input(
        &self,
        agent: usize,
        states: &Array2<f64>,
        obs: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, usize), AlgoError> {
        if self.centralized {
            Ok((hstack(states, actions)?, states.ncols() + agent))
        } else {
            let own = actions.column(agent).to_owned().insert_axis(Axis(1));
            Ok((hstack(obs, &own)?, OBS_DIM))
        }
    }

    /// One gradient step for every agent on a shared minibatch. Skips (and
    /// counts the skip) while the buffer holds fewer than the warm-up count.
    pub fn update(&mut self) -> Result<UpdateStats, AlgoError> {
        let mut stats = UpdateStats::default();
        if self.buffer.len() < self.hyper.warmup.max(self.hyper.minibatch_size).max(1) {
            stats.skipped = 1;
            return Ok(stats);
        }
        let idx = self
            .buffer
            .sample_indices(self.hyper.minibatch_size, &mut self.rngs.updates);
        let batch = Batch::gather(&self.buffer, &idx, self.n_agents)?;
        let b = idx.len();

        let mut next_actions = Array2::zeros((b, self.n_agents));
        for j in 0..self.n_agents {
            let a = self.actor_targets[j].forward_batch(batch.next_obs[j].view())?;
            next_actions.column_mut(j).assign(&a.column(0));
        }

        let mut actor_loss = 0.0;
        let mut critic_loss = 0.0;
        let mut aborted = false;
        for i in 0..self.n_agents {
            let (x_next, _) = self.critic_input(i, &batch.next_states, &batch.next_obs[i], &next_actions)?;
            let q_next = self.critic_targets[i].forward_batch(x_next.view())?;
            let y = Array2::from_shape_fn((b, 1), |(r, _)| {
                ddpg_critic_target(batch.rewards[[r, i]], batch.done[r], self.hyper.gamma, q_next[[r, 0]])
            });
            let (x, col) = self.critic_input(i, &batch.states, &batch.obs[i], &batch.actions)?;

            let lr = self.hyper.learning_rate;
            let c = critic_regression(&self.critics[i], x.clone(), y.view())
                .and_then(|(loss, g)| self.critic_opts[i].step(&mut self.critics[i], &g, lr).map(|_| loss));
            let a = c.and_then(|closs| {
                let (aloss, g) = ddpg_actor_loss(&self.actors[i], &self.critics[i], batch.obs[i].clone(), &x, col)?;
                self.actor_opts[i].step(&mut self.actors[i], &g, lr)?;
                Ok((aloss, closs))
            });
            match a {
                Ok((aloss, closs)) => {
                    actor_loss += aloss / self.n_agents as f64;
                    critic_loss += closs / self.n_agents as f64;
                }
                Err(e) if is_numeric_abort(&e) => aborted = true,
                Err(e) => return Err(e.into()),
            }
            soft_update(&mut self.critic_targets[i], &self.critics[i], self.hyper.tau)?;
            soft_update(&mut self.actor_targets[i], &self.actors[i], self.hyper.tau)?;
        }
        if aborted {
            stats.aborted = 1;
        } else {
            stats.record(actor_loss, critic_loss);
        }
        Ok(stats)
    }
}

impl MultiAgentLearner for Ddpg {
    fn algorithm(&self) -> Algorithm {
        if self.centralized {
            Algorithm::Maddpg
        } else {
            Algorithm::Iddpg
        }
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn explore(&mut self, observations: &[AgentObservation]) -> Result<ActionChoice, AlgoError> {
        check_observations(observations, self.n_agents)?;
        let sigma = self.hyper.exploration_sigma;
        let mut actions = Vec::with_capacity(self.n_agents);
        for (actor, obs) in self.actors.iter().zip(observations) {
            let a = actor.forward(obs.as_slice())?[0];
            let noise = if sigma > 0.0 {
                Normal::new(0.0, sigma)
                    .expect("sigma validated")
                    .sample(&mut self.rngs.actions)
            } else {
                0.0
            };
            actions.push((a + noise).clamp(-1.0, 1.0));
        }
        Ok(ActionChoice {
            actions,
            pre_tanh: None,
            log_probs: None,
        })
    }

    fn act_deterministic(&self, agent: usize, observation: &AgentObservation) -> Result<f64, AlgoError> {
        check_agent(agent, self.n_agents)?;
        Ok(self.actors[agent].forward(observation.as_slice())?[0])
    }

    fn record(&mut self, transition: Transition, _choice: &ActionChoice) -> Result<UpdateStats, AlgoError> {
        self.buffer.push(transition);
        self.update()
    }

    fn end_episode(&mut self) -> Result<UpdateStats, AlgoError> {
        Ok(UpdateStats::default())
    }

    fn checkpoint(&self, episode: usize) -> NetworkSet {
        let mut set = NetworkSet::new(self.name(), episode);
        for i in 0..self.n_agents {
            set.networks
                .push(NetworkRecord::from_mlp(format!("actor_{i}"), &self.actors[i]));
            set.networks
                .push(NetworkRecord::from_mlp(format!("critic_{i}"), &self.critics[i]));
            set.networks.push(NetworkRecord::from_mlp(
                format!("actor_target_{i}"),
                &self.actor_targets[i],
            ));
            set.networks.push(NetworkRecord::from_mlp(
                format!("critic_target_{i}"),
                &self.critic_targets[i],
            ));
        }
        set
    }

    fn restore(&mut self, checkpoint: &NetworkSet) -> Result<(), AlgoError> {
        check_algorithm(checkpoint, self.name())?;
        let load = |name: String, like: &Mlp| -> Result<Mlp, AlgoError> {
            let net = checkpoint.get(&name)?.to_mlp()?;
            if net.in_dim() != like.in_dim() || net.out_dim() != like.out_dim() {
                return Err(AlgoError::Checkpoint(format!("{name} has the wrong shape")));
            }
            Ok(net)
        };
        let mut actors = Vec::new();
        let mut critics = Vec::new();
        let mut actor_targets = Vec::new();
        let mut critic_targets = Vec::new();
        for i in 0..self.n_agents {
            actors.push(load(format!("actor_{i}"), &self.actors[i])?);
            critics.push(load(format!("critic_{i}"), &self.critics[i])?);
            actor_targets.push(load(format!("actor_target_{i}"), &self.actors[i])?);
            critic_targets.push(load(format!("critic_target_{i}"), &self.critics[i])?);
        }
        self.actor_opts = actors.iter().map(AdamState::new).collect();
        self.critic_opts = critics.iter().map(AdamState::new).collect();
        self.actors = actors;
        self.critics = critics;
        self.actor_targets = actor_targets;
        self.critic_targets = critic_targets;
        Ok(())
    }

    fn param_checksum(&self) -> u64 {
        combine_checksums(
            self.actors
                .iter()
                .chain(&self.critics)
                .chain(&self.actor_targets)
                .chain(&self.critic_targets)
                .map(param_checksum),
        )
    }

    fn replay_len(&self) -> usize {
        self.buffer.len()
    }
}
