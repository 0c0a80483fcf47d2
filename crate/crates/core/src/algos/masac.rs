use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::common::{
    check_agent, check_algorithm, check_observations, combine_checksums, hstack, is_numeric_abort, state_dim, Batch,
    LearnerRngs,
};
use super::ddpg::critic;
use super::{
    critic_regression, masac_critic_target, sac_actor_loss, ActionChoice, AlgoError, Algorithm, Hyperparams,
    MultiAgentLearner, ReplayBuffer, Transition, UpdateStats,
};
use crate::market::{AgentObservation, OBS_DIM};
use crate::nn::{
    param_checksum, soft_update, squash_with_noise, AdamState, GaussianPolicy, Mlp, NetworkRecord, NetworkSet,
};

/// Soft actor-critic with twin centralized critics per agent and a learned
/// per-agent entropy coefficient.
pub struct Masac {
    hyper: Hyperparams,
    n_agents: usize,
    actors: Vec<GaussianPolicy>,
    actor_opts: Vec<AdamState>,
    q1: Vec<Mlp>,
    q2: Vec<Mlp>,
    q1_targets: Vec<Mlp>,
    q2_targets: Vec<Mlp>,
    q1_opts: Vec<AdamState>,
    q2_opts: Vec<AdamState>,
    log_alpha: Vec<Vec<f64>>,
    alpha_opts: Vec<AdamState>,
    target_entropy: f64,
    buffer: ReplayBuffer<Transition>,
    rngs: LearnerRngs,
}

impl Masac {
    pub fn new(hyper: Hyperparams, n_agents: usize, seed: u64) -> Result<Self, AlgoError> {
        let mut rngs = LearnerRngs::new(seed);
        let critic_in = state_dim(n_agents) + n_agents;
        let mut actors = Vec::with_capacity(n_agents);
        let mut q1 = Vec::with_capacity(n_agents);
        let mut q2 = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            actors.push(GaussianPolicy::new(OBS_DIM, 1, hyper.actor_hidden, &mut rngs.init)?);
            q1.push(critic(critic_in, hyper.critic_hidden, &mut rngs.init)?);
            q2.push(critic(critic_in, hyper.critic_hidden, &mut rngs.init)?);
        }
        let log_alpha = vec![vec![hyper.initial_alpha.ln()]; n_agents];
        Ok(Self {
            actor_opts: actors.iter().map(AdamState::new).collect(),
            q1_opts: q1.iter().map(AdamState::new).collect(),
            q2_opts: q2.iter().map(AdamState::new).collect(),
            alpha_opts: log_alpha.iter().map(AdamState::new).collect(),
            q1_targets: q1.clone(),
            q2_targets: q2.clone(),
            actors,
            q1,
            q2,
            log_alpha,
            target_entropy: -1.0,
            buffer: ReplayBuffer::new(hyper.buffer_capacity),
            hyper,
            n_agents,
            rngs,
        })
    }

    pub fn alpha(&self, agent: usize) -> f64 {
        self.log_alpha[agent][0].exp()
    }

    pub fn actor(&self, agent: usize) -> &GaussianPolicy {
        &self.actors[agent]
    }

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
        let sd = state_dim(self.n_agents);

        // next actions come from the current policies
        let mut next_actions = Array2::zeros((b, self.n_agents));
        let mut next_log_probs = Array2::zeros((b, self.n_agents));
        for j in 0..self.n_agents {
            let means = self.actors[j].mean_net.forward_batch(batch.next_obs[j].view())?;
            for r in 0..b {
                let z: f64 = self.rngs.updates.sample(StandardNormal);
                let s = squash_with_noise(&self.actors[j].head, &[means[[r, 0]]], &[z]);
                next_actions[[r, j]] = s.action[0];
                next_log_probs[[r, j]] = s.log_prob;
            }
        }
        let x_next = hstack(&batch.next_states, &next_actions)?;
        let x = hstack(&batch.states, &batch.actions)?;
        let lr = self.hyper.learning_rate;

        let mut actor_loss = 0.0;
        let mut critic_loss = 0.0;
        let mut entropy = 0.0;
        let mut alpha_sum = 0.0;
        let mut aborted = false;
        for i in 0..self.n_agents {
            let alpha = self.alpha(i);
            let q1n = self.q1_targets[i].forward_batch(x_next.view())?;
            let q2n = self.q2_targets[i].forward_batch(x_next.view())?;
            let y = Array2::from_shape_fn((b, 1), |(r, _)| {
                masac_critic_target(
                    batch.rewards[[r, i]],
                    batch.done[r],
                    self.hyper.gamma,
                    q1n[[r, 0]],
                    q2n[[r, 0]],
                    alpha,
                    next_log_probs[[r, i]],
                )
            });
            let noise: Vec<f64> = (0..b).map(|_| self.rngs.updates.sample(StandardNormal)).collect();

            let outcome = (|| {
                let (l1, g1) = critic_regression(&self.q1[i], x.clone(), y.view())?;
                let (l2, g2) = critic_regression(&self.q2[i], x.clone(), y.view())?;
                self.q1_opts[i].step(&mut self.q1[i], &g1, lr)?;
                self.q2_opts[i].step(&mut self.q2[i], &g2, lr)?;
                let (aloss, g, mean_logp) = sac_actor_loss(
                    &self.actors[i],
                    [&self.q1[i], &self.q2[i]],
                    batch.obs[i].clone(),
                    &x,
                    sd + i,
                    &noise,
                    alpha,
                )?;
                self.actor_opts[i].step(&mut self.actors[i], &g, lr)?;
                self.actors[i].head.clamp();
                let alpha_grad = vec![-(mean_logp + self.target_entropy)];
                self.alpha_opts[i].step(&mut self.log_alpha[i], &alpha_grad, lr)?;
                Ok::<_, crate::nn::NnError>((aloss, 0.5 * (l1 + l2), mean_logp))
            })();
            match outcome {
                Ok((aloss, closs, mean_logp)) => {
                    actor_loss += aloss / self.n_agents as f64;
                    critic_loss += closs / self.n_agents as f64;
                    entropy += -mean_logp / self.n_agents as f64;
                    alpha_sum += alpha / self.n_agents as f64;
                }
                Err(e) if is_numeric_abort(&e) => aborted = true,
                Err(e) => return Err(e.into()),
            }
            soft_update(&mut self.q1_targets[i], &self.q1[i], self.hyper.tau)?;
            soft_update(&mut self.q2_targets[i], &self.q2[i], self.hyper.tau)?;
        }
        if aborted {
            stats.aborted = 1;
        } else {
            stats.record(actor_loss, critic_loss);
            stats.record_entropy(entropy);
            stats.record_alpha(alpha_sum);
        }
        Ok(stats)
    }
}

impl MultiAgentLearner for Masac {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Masac
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn explore(&mut self, observations: &[AgentObservation]) -> Result<ActionChoice, AlgoError> {
        check_observations(observations, self.n_agents)?;
        let mut actions = Vec::with_capacity(self.n_agents);
        for (actor, obs) in self.actors.iter().zip(observations) {
            actions.push(actor.sample(obs.as_slice(), &mut self.rngs.actions)?.action[0]);
        }
        Ok(ActionChoice {
            actions,
            pre_tanh: None,
            log_probs: None,
        })
    }

    fn act_deterministic(&self, agent: usize, observation: &AgentObservation) -> Result<f64, AlgoError> {
        check_agent(agent, self.n_agents)?;
        Ok(self.actors[agent].deterministic(observation.as_slice())?[0])
    }

    fn record(&mut self, transition: Transition, _choice: &ActionChoice) -> Result<UpdateStats, AlgoError> {
        self.buffer.push(transition);
        self.update()
    }

    fn end_episode(&mut self) -> Result<UpdateStats, AlgoError> {
        Ok(UpdateStats::default())
    }

    fn checkpoint(&self, episode: usize) -> NetworkSet {
        let mut set = NetworkSet::new(Algorithm::Masac.name(), episode);
        for i in 0..self.n_agents {
            set.networks
                .push(NetworkRecord::from_policy(format!("actor_{i}"), &self.actors[i]));
            set.networks
                .push(NetworkRecord::from_mlp(format!("q1_{i}"), &self.q1[i]));
            set.networks
                .push(NetworkRecord::from_mlp(format!("q2_{i}"), &self.q2[i]));
            set.networks
                .push(NetworkRecord::from_mlp(format!("q1_target_{i}"), &self.q1_targets[i]));
            set.networks
                .push(NetworkRecord::from_mlp(format!("q2_target_{i}"), &self.q2_targets[i]));
            set.networks.push(NetworkRecord {
                name: format!("log_alpha_{i}"),
                layers: Vec::new(),
                params: self.log_alpha[i].clone(),
                log_std: None,
            });
        }
        set
    }

    fn restore(&mut self, checkpoint: &NetworkSet) -> Result<(), AlgoError> {
        check_algorithm(checkpoint, Algorithm::Masac.name())?;
        let load = |name: String, like: &Mlp| -> Result<Mlp, AlgoError> {
            let net = checkpoint.get(&name)?.to_mlp()?;
            if net.in_dim() != like.in_dim() || net.out_dim() != like.out_dim() {
                return Err(AlgoError::Checkpoint(format!("{name} has the wrong shape")));
            }
            Ok(net)
        };
        let mut actors = Vec::new();
        let (mut q1, mut q2, mut q1t, mut q2t, mut la) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..self.n_agents {
            actors.push(checkpoint.get(&format!("actor_{i}"))?.to_policy()?);
            q1.push(load(format!("q1_{i}"), &self.q1[i])?);
            q2.push(load(format!("q2_{i}"), &self.q2[i])?);
            q1t.push(load(format!("q1_target_{i}"), &self.q1[i])?);
            q2t.push(load(format!("q2_target_{i}"), &self.q2[i])?);
            let rec = checkpoint.get(&format!("log_alpha_{i}"))?;
            if rec.params.len() != 1 || !rec.params[0].is_finite() {
                return Err(AlgoError::Checkpoint(format!(
                    "log_alpha_{i} must hold one finite value"
                )));
            }
            la.push(rec.params.clone());
        }
        self.actor_opts = actors.iter().map(AdamState::new).collect();
        self.q1_opts = q1.iter().map(AdamState::new).collect();
        self.q2_opts = q2.iter().map(AdamState::new).collect();
        self.alpha_opts = la.iter().map(AdamState::new).collect();
        self.actors = actors;
        self.q1 = q1;
        self.q2 = q2;
        self.q1_targets = q1t;
        self.q2_targets = q2t;
        self.log_alpha = la;
        Ok(())
    }

    fn param_checksum(&self) -> u64 {
        combine_checksums(
            self.actors
                .iter()
                .map(param_checksum)
                .chain(
                    self.q1
                        .iter()
                        .chain(&self.q2)
                        .chain(&self.q1_targets)
                        .chain(&self.q2_targets)
                        .map(param_checksum),
                )
                .chain(self.log_alpha.iter().map(param_checksum)),
        )
    }

    fn replay_len(&self) -> usize {
        self.buffer.len()
    }
}
