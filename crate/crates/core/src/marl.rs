//! Deterministic-policy actor-critic learners in two regimes.
//!
//! Privacy-sensitive agents keep their own buffer, actor and critic. The
//! privacy-insensitive group shares one joint buffer; each of its agents
//! owns a centralized critic over all group observations and actions, laid
//! out as `[o_1 .. o_N, a_1 .. a_N]`, while its actor still sees only its
//! own observation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::fedwgt::{aggregate_class, Strategy};
use crate::nn::{soft_update, Activation, GradientSet, Mlp};
use crate::noise::sample_noise;
use crate::par::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub discount: f64,
    pub soft_update: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden_layers: Vec<usize>,
    /// Global gradient norm cap per update.
    pub grad_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            discount: 0.1,
            soft_update: 0.1,
            batch_size: 8,
            buffer_capacity: 100,
            lr_actor: 0.002,
            lr_critic: 0.02,
            hidden_layers: vec![8, 8, 8],
            grad_clip: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.discount) {
            bad.push(format!("discount must lie in [0, 1) (got {})", self.discount));
        }
        if !(self.soft_update > 0.0 && self.soft_update <= 1.0) {
            bad.push(format!("soft_update must lie in (0, 1] (got {})", self.soft_update));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.buffer_capacity < self.batch_size {
            bad.push(format!(
                "buffer_capacity ({}) must be >= batch_size ({})",
                self.buffer_capacity, self.batch_size
            ));
        }
        for (name, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be > 0 (got {v})"));
            }
        }
        if self.hidden_layers.contains(&0) {
            bad.push("hidden layer widths must be >= 1".into());
        }
        bad
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(&self.hidden_layers);
        s.push(output);
        s
    }
}

/// Fixed-capacity FIFO replay memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Indices of a uniform draw without replacement, or `None` while the
    /// buffer holds fewer than `batch` items.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&T>> {
        self.sample_indices(batch, rng)
            .map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// One step of the whole privacy-insensitive group.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
}

impl JointTransition {
    pub fn agents(&self) -> usize {
        self.obs.len()
    }

    fn check(&self, agents: usize, obs_dim: usize, action_dim: usize) -> Result<()> {
        let aligned = self.obs.len() == agents
            && self.actions.len() == agents
            && self.rewards.len() == agents
            && self.next_obs.len() == agents
            && self.obs.iter().chain(&self.next_obs).all(|o| o.len() == obs_dim)
            && self.actions.iter().all(|a| a.len() == action_dim);
        if aligned {
            Ok(())
        } else {
            Err(Error::MisalignedBatch(format!(
                "expected {agents} agents with {obs_dim}-d observations and {action_dim}-d actions"
            )))
        }
    }
}

/// Centralized critic input `[o_1 .. o_N, a_1 .. a_N]`.
pub fn joint_input(obs: &[Vec<f64>], actions: &[Vec<f64>]) -> Vec<f64> {
    obs.iter().chain(actions).flatten().copied().collect()
}

fn local_input(obs: &[f64], action: &[f64]) -> Vec<f64> {
    obs.iter().chain(action).copied().collect()
}

/// Anything that scores a critic input and exposes the gradient with respect
/// to that input.
pub trait ActionValue {
    fn input_dim(&self) -> usize;
    fn value_and_input_grad(&self, input: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl ActionValue for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn value_and_input_grad(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let q = trace.output()[0];
        let g = self.backward_trace(&trace, &[1.0])?;
        Ok((q, g.input))
    }
}

/// `Q(x) = -sum (x[i] - c)^2` over the listed `(i, c)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProbe {
    pub input_dim: usize,
    pub centers: Vec<(usize, f64)>,
}

impl ActionValue for QuadraticProbe {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn value_and_input_grad(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: input.len(),
            });
        }
        let mut grad = vec![0.0; input.len()];
        let mut q = 0.0;
        for &(i, c) in &self.centers {
            let d = input[i] - c;
            q -= d * d;
            grad[i] -= 2.0 * d;
        }
        Ok((q, grad))
    }
}

pub fn actor_net<R: Rng + ?Sized>(hp: &Hyperparams, obs_dim: usize, action_dim: usize, rng: &mut R) -> Mlp {
    Mlp::new(&hp.sizes(obs_dim, action_dim), Activation::Relu, Activation::Tanh, rng)
}

pub fn critic_net<R: Rng + ?Sized>(hp: &Hyperparams, input_dim: usize, rng: &mut R) -> Mlp {
    Mlp::new(&hp.sizes(input_dim, 1), Activation::Relu, Activation::Identity, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedAction {
    pub mean: Vec<f64>,
    /// Perturbation before clamping.
    pub noise: Vec<f64>,
    pub action: Vec<f64>,
}

/// Policy output plus Gaussian exploration of standard deviation
/// `noise_scale`, clamped to `[-1, 1]`.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    obs: &[f64],
    noise_scale: f64,
    rng: &mut R,
) -> Result<SelectedAction> {
    let mean = actor.forward(obs)?;
    let noise = sample_noise(noise_scale, mean.len(), rng);
    let action = mean.iter().zip(&noise).map(|(m, e)| (m + e).clamp(-1.0, 1.0)).collect();
    Ok(SelectedAction { mean, noise, action })
}

/// Bootstrapped targets `r + discount * Q'(o', mu'(o'))` for local transitions.
pub fn sensitive_targets(
    target_critic: &Mlp,
    target_actor: &Mlp,
    batch: &[&Transition],
    discount: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let a = target_actor.forward(&t.next_obs)?;
            let q = target_critic.forward(&local_input(&t.next_obs, &a))?[0];
            Ok(t.reward + discount * q)
        })
        .collect()
}

/// Targets for insensitive agent `k`: every agent's next action comes from
/// its own target actor.
pub fn insensitive_targets(
    target_critic: &Mlp,
    target_actors: &[Mlp],
    batch: &[&JointTransition],
    k: usize,
    discount: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let next: Vec<Vec<f64>> = target_actors
                .iter()
                .zip(&t.next_obs)
                .map(|(mu, o)| mu.forward(o))
                .collect::<Result<_>>()?;
            let q = target_critic.forward(&joint_input(&t.next_obs, &next))?[0];
            Ok(t.rewards[k] + discount * q)
        })
        .collect()
}

/// One clipped SGD step on the mean squared error. Returns the loss before the step.
pub fn critic_regression_step(
    critic: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[f64],
    lr: f64,
    clip: f64,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    let scale = 1.0 / inputs.len() as f64;
    let mut grads = GradientSet::zeros_like(critic);
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let trace = critic.forward_trace(x)?;
        let err = trace.output()[0] - y;
        loss += err * err;
        grads.accumulate(&critic.backward_trace(&trace, &[2.0 * err])?, scale);
    }
    grads.clip_to_norm(clip);
    critic.apply_gradients(&grads, lr)?;
    Ok(loss * scale)
}

/// One clipped ascent step of `Q` through the actor. `build` places the
/// actor's action into the critic input for sample `i`; the action occupies
/// `slot..slot + action_dim` of that input. Returns the batch-mean `Q`
/// before the step.
pub fn actor_ascent_step<Q, F>(
    actor: &mut Mlp,
    critic: &Q,
    obs: &[&[f64]],
    slot: usize,
    build: F,
    lr: f64,
    clip: f64,
) -> Result<f64>
where
    Q: ActionValue + ?Sized,
    F: Fn(usize, &[f64]) -> Vec<f64>,
{
    if obs.is_empty() {
        return Err(Error::Empty("actor batch"));
    }
    let dim = actor.output_dim();
    let scale = 1.0 / obs.len() as f64;
    let mut grads = GradientSet::zeros_like(actor);
    let mut mean_q = 0.0;
    for (i, o) in obs.iter().enumerate() {
        let trace = actor.forward_trace(o)?;
        let input = build(i, trace.output());
        let (q, dq) = critic.value_and_input_grad(&input)?;
        mean_q += q * scale;
        let upstream: Vec<f64> = dq[slot..slot + dim].iter().map(|g| -g).collect();
        grads.accumulate(&actor.backward_trace(&trace, &upstream)?, scale);
    }
    grads.clip_to_norm(clip);
    actor.apply_gradients(&grads, lr)?;
    Ok(mean_q)
}

pub fn update_sensitive_critic(
    critic: &mut Mlp,
    target_critic: &Mlp,
    target_actor: &Mlp,
    batch: &[&Transition],
    hp: &Hyperparams,
) -> Result<f64> {
    let targets = sensitive_targets(target_critic, target_actor, batch, hp.discount)?;
    let inputs: Vec<Vec<f64>> = batch.iter().map(|t| local_input(&t.obs, &t.action)).collect();
    critic_regression_step(critic, &inputs, &targets, hp.lr_critic, hp.grad_clip)
}

pub fn update_sensitive_actor<Q: ActionValue + ?Sized>(
    actor: &mut Mlp,
    critic: &Q,
    batch: &[&Transition],
    hp: &Hyperparams,
) -> Result<f64> {
    let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
    let slot = obs.first().map_or(0, |o| o.len());
    actor_ascent_step(
        actor,
        critic,
        &obs,
        slot,
        |i, a| local_input(obs[i], a),
        hp.lr_actor,
        hp.grad_clip,
    )
}

fn check_joint(batch: &[&JointTransition], agents: usize, obs_dim: usize, action_dim: usize) -> Result<()> {
    batch.iter().try_for_each(|t| t.check(agents, obs_dim, action_dim))
}

pub fn update_insensitive_critic(
    critic: &mut Mlp,
    target_critic: &Mlp,
    target_actors: &[Mlp],
    batch: &[&JointTransition],
    k: usize,
    hp: &Hyperparams,
) -> Result<f64> {
    let n = target_actors.len();
    let (obs_dim, action_dim) = target_actors
        .first()
        .map(|a| (a.input_dim(), a.output_dim()))
        .ok_or(Error::Empty("insensitive group"))?;
    check_joint(batch, n, obs_dim, action_dim)?;
    if k >= n {
        return Err(Error::MisalignedBatch(format!("agent {k} outside a group of {n}")));
    }
    let targets = insensitive_targets(target_critic, target_actors, batch, k, hp.discount)?;
    let inputs: Vec<Vec<f64>> = batch.iter().map(|t| joint_input(&t.obs, &t.actions)).collect();
    critic_regression_step(critic, &inputs, &targets, hp.lr_critic, hp.grad_clip)
}

/// Ascends agent `k`'s centralized critic through agent `k`'s action slot
/// only; the other slots keep their replayed actions.
pub fn update_insensitive_actor<Q: ActionValue + ?Sized>(
    actor: &mut Mlp,
    critic: &Q,
    batch: &[&JointTransition],
    k: usize,
    hp: &Hyperparams,
) -> Result<f64> {
    let Some(first) = batch.first() else {
        return Err(Error::Empty("actor batch"));
    };
    let n = first.agents();
    let (obs_dim, action_dim) = (actor.input_dim(), actor.output_dim());
    check_joint(batch, n, obs_dim, action_dim)?;
    if k >= n {
        return Err(Error::MisalignedBatch(format!("agent {k} outside a group of {n}")));
    }
    let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs[k].as_slice()).collect();
    let slot = n * obs_dim + k * action_dim;
    actor_ascent_step(
        actor,
        critic,
        &obs,
        slot,
        |i, a| {
            let mut x = joint_input(&batch[i].obs, &batch[i].actions);
            x[slot..slot + action_dim].copy_from_slice(a);
            x
        },
        hp.lr_actor,
        hp.grad_clip,
    )
}

/// Network passes of one training iteration, by who runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    /// Actor and critic updates on sensitive stations.
    pub sensitive_online: u64,
    /// Target actor and target critic syncs on sensitive stations.
    pub sensitive_target: u64,
    /// Actor update and target actor sync on insensitive stations.
    pub insensitive_actor: u64,
    /// Centralized critic update and target sync, run on the server.
    pub server_critic: u64,
    /// Aggregation and broadcast.
    pub federation: u64,
}

impl OpCounts {
    pub fn sensitive(&self) -> u64 {
        self.sensitive_online + self.sensitive_target
    }

    /// Passes charged to the stations' side of training plus federation.
    pub fn station_side(&self) -> u64 {
        self.sensitive() + self.insensitive_actor + self.federation
    }

    pub fn total(&self) -> u64 {
        self.station_side() + self.server_critic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Sensitive,
    InsensitiveCritic,
    InsensitiveActor,
    Federation,
    TargetUpdate,
}

#[derive(Debug, Clone)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
}

impl AgentNets {
    fn new(actor: Mlp, critic: Mlp) -> Self {
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    fn sync_targets(&mut self, phi: f64) -> Result<()> {
        soft_update(&mut self.target_actor, &self.actor, phi)?;
        soft_update(&mut self.target_critic, &self.critic, phi)
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
            .iter()
            .all(|n| n.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SensitiveAgent {
    pub nets: AgentNets,
    pub buffer: ReplayBuffer<Transition>,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct InsensitiveAgent {
    pub nets: AgentNets,
    pub rng: ChaCha8Rng,
}

/// Batch indices drawn by an insensitive agent and its critic loss.
type SampledLoss = (Vec<usize>, f64);

/// Losses and values of one iteration; `None` where no update ran.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationReport {
    pub critic_losses: Vec<Option<f64>>,
    pub actor_values: Vec<Option<f64>>,
    pub federated: bool,
}

impl IterationReport {
    pub fn trained(&self) -> bool {
        self.critic_losses.iter().any(Option::is_some)
    }
}

/// All learners of one experiment, indexed like the environment: sensitive
/// agents first.
#[derive(Debug, Clone)]
pub struct Trainer {
    hp: Hyperparams,
    obs_dim: usize,
    action_dim: usize,
    parallelism: Parallelism,
    pub sensitive: Vec<SensitiveAgent>,
    pub insensitive: Vec<InsensitiveAgent>,
    pub joint_buffer: ReplayBuffer<JointTransition>,
    iteration: u64,
    federation_rounds: u64,
    last_ops: OpCounts,
    last_phases: Vec<Phase>,
}

impl Trainer {
    /// Agent `k` draws from stream `k` of `seed`. With a federation strategy
    /// each critic class starts from its uniform average.
    pub fn new(
        hp: &Hyperparams,
        sensitive: usize,
        insensitive: usize,
        seed: u64,
        strategy: Strategy,
        parallelism: Parallelism,
    ) -> Result<Self> {
        let bad = hp.validate();
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        let (obs_dim, action_dim) = (OBS_DIM, ACTION_DIM);
        let stream = |k: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            rng
        };
        let joint = insensitive * (obs_dim + action_dim);
        let sens = (0..sensitive)
            .map(|k| {
                let mut rng = stream(k);
                let actor = actor_net(hp, obs_dim, action_dim, &mut rng);
                let critic = critic_net(hp, obs_dim + action_dim, &mut rng);
                SensitiveAgent {
                    nets: AgentNets::new(actor, critic),
                    buffer: ReplayBuffer::new(hp.buffer_capacity),
                    rng,
                }
            })
            .collect();
        let ins = (0..insensitive)
            .map(|k| {
                let mut rng = stream(sensitive + k);
                let actor = actor_net(hp, obs_dim, action_dim, &mut rng);
                let critic = critic_net(hp, joint, &mut rng);
                InsensitiveAgent {
                    nets: AgentNets::new(actor, critic),
                    rng,
                }
            })
            .collect();
        let mut t = Self {
            hp: hp.clone(),
            obs_dim,
            action_dim,
            parallelism,
            sensitive: sens,
            insensitive: ins,
            joint_buffer: ReplayBuffer::new(hp.buffer_capacity),
            iteration: 0,
            federation_rounds: 0,
            last_ops: OpCounts::default(),
            last_phases: Vec::new(),
        };
        if strategy != Strategy::None {
            let uniform = vec![1.0; t.agents()];
            t.fuse_critics(&uniform, strategy)?;
            for n in t.nets_mut() {
                n.target_critic = n.critic.clone();
            }
        }
        Ok(t)
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn agents(&self) -> usize {
        self.sensitive.len() + self.insensitive.len()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn federation_rounds(&self) -> u64 {
        self.federation_rounds
    }

    pub fn set_progress(&mut self, iteration: u64, federation_rounds: u64) {
        self.iteration = iteration;
        self.federation_rounds = federation_rounds;
    }

    pub fn set_parallelism(&mut self, p: Parallelism) {
        self.parallelism = p;
    }

    /// Pass counts of the most recent iteration.
    pub fn op_counts(&self) -> OpCounts {
        self.last_ops
    }

    /// Phases of the most recent iteration, in execution order.
    pub fn last_phases(&self) -> &[Phase] {
        &self.last_phases
    }

    pub fn nets(&self, k: usize) -> &AgentNets {
        let s = self.sensitive.len();
        if k < s {
            &self.sensitive[k].nets
        } else {
            &self.insensitive[k - s].nets
        }
    }

    pub fn nets_mut(&mut self) -> impl Iterator<Item = &mut AgentNets> {
        self.sensitive
            .iter_mut()
            .map(|a| &mut a.nets)
            .chain(self.insensitive.iter_mut().map(|a| &mut a.nets))
    }

    pub fn rngs(&self) -> impl Iterator<Item = &ChaCha8Rng> {
        self.sensitive
            .iter()
            .map(|a| &a.rng)
            .chain(self.insensitive.iter().map(|a| &a.rng))
    }

    pub fn rngs_mut(&mut self) -> impl Iterator<Item = &mut ChaCha8Rng> {
        self.sensitive
            .iter_mut()
            .map(|a| &mut a.rng)
            .chain(self.insensitive.iter_mut().map(|a| &mut a.rng))
    }

    pub fn is_finite(&self) -> bool {
        (0..self.agents()).all(|k| self.nets(k).is_finite())
    }

    /// One exploratory action per agent from its local observation.
    pub fn select_actions(&mut self, obs: &[Vec<f64>], noise_scale: f64) -> Result<Vec<Vec<f64>>> {
        if obs.len() != self.agents() {
            return Err(Error::Dimension {
                expected: self.agents(),
                actual: obs.len(),
            });
        }
        let s = self.sensitive.len();
        let mut out = Vec::with_capacity(obs.len());
        for (k, o) in obs.iter().enumerate() {
            let (actor, rng) = if k < s {
                let a = &mut self.sensitive[k];
                (&a.nets.actor, &mut a.rng)
            } else {
                let a = &mut self.insensitive[k - s];
                (&a.nets.actor, &mut a.rng)
            };
            out.push(select_action(actor, o, noise_scale, rng)?.action);
        }
        Ok(out)
    }

    /// Stores one environment step: per-agent transitions for sensitive
    /// agents, one joint transition for the insensitive group.
    pub fn store(
        &mut self,
        obs: &[Vec<f64>],
        actions: &[Vec<f64>],
        rewards: &[f64],
        next_obs: &[Vec<f64>],
    ) -> Result<()> {
        let n = self.agents();
        for len in [obs.len(), actions.len(), rewards.len(), next_obs.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: len,
                });
            }
        }
        let s = self.sensitive.len();
        for (k, agent) in self.sensitive.iter_mut().enumerate() {
            agent.buffer.push(Transition {
                obs: obs[k].clone(),
                action: actions[k].clone(),
                reward: rewards[k],
                next_obs: next_obs[k].clone(),
            });
        }
        if !self.insensitive.is_empty() {
            self.joint_buffer.push(JointTransition {
                obs: obs[s..].to_vec(),
                actions: actions[s..].to_vec(),
                rewards: rewards[s..].to_vec(),
                next_obs: next_obs[s..].to_vec(),
            });
        }
        Ok(())
    }

    /// One training iteration: sensitive updates, insensitive critics,
    /// insensitive actors, federation, then target syncs. Agents whose
    /// buffer is still shorter than a batch skip it. `weights` holds one
    /// aggregation weight per agent.
    pub fn train_iteration(&mut self, weights: &[f64], strategy: Strategy) -> Result<IterationReport> {
        let n = self.agents();
        if weights.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: weights.len(),
            });
        }
        self.iteration += 1;
        self.last_ops = OpCounts::default();
        self.last_phases.clear();
        let hp = self.hp.clone();
        let mode = self.parallelism;
        let mut report = IterationReport {
            critic_losses: vec![None; n],
            actor_values: vec![None; n],
            federated: false,
        };

        // Sensitive agents are independent of one another.
        self.last_phases.push(Phase::Sensitive);
        let sens: Vec<Result<Option<(f64, f64)>>> = par::map_mut(mode, &mut self.sensitive, |_, a| {
            let Some(idx) = a.buffer.sample_indices(hp.batch_size, &mut a.rng) else {
                return Ok(None);
            };
            let batch: Vec<&Transition> = idx.iter().map(|&i| &a.buffer.items[i]).collect();
            let nets = &mut a.nets;
            let loss = update_sensitive_critic(&mut nets.critic, &nets.target_critic, &nets.target_actor, &batch, &hp)?;
            let q = update_sensitive_actor(&mut nets.actor, &nets.critic, &batch, &hp)?;
            Ok(Some((loss, q)))
        });
        let mut sensitive_trained = Vec::with_capacity(sens.len());
        for (k, r) in sens.into_iter().enumerate() {
            let r = r?;
            if let Some((loss, q)) = r {
                report.critic_losses[k] = Some(loss);
                report.actor_values[k] = Some(q);
                self.last_ops.sensitive_online += 2;
            }
            sensitive_trained.push(r.is_some());
        }

        let s = self.sensitive.len();
        let mut insensitive_batches: Vec<Option<Vec<usize>>> = Vec::new();
        if !self.insensitive.is_empty() {
            self.last_phases.push(Phase::InsensitiveCritic);
            let target_actors: Vec<Mlp> = self.insensitive.iter().map(|a| a.nets.target_actor.clone()).collect();
            let buffer = &self.joint_buffer;
            let crit: Vec<Result<Option<SampledLoss>>> = par::map_mut(mode, &mut self.insensitive, |k, a| {
                let Some(idx) = buffer.sample_indices(hp.batch_size, &mut a.rng) else {
                    return Ok(None);
                };
                let batch: Vec<&JointTransition> = idx.iter().map(|&i| &buffer.items[i]).collect();
                let nets = &mut a.nets;
                let loss =
                    update_insensitive_critic(&mut nets.critic, &nets.target_critic, &target_actors, &batch, k, &hp)?;
                Ok(Some((idx, loss)))
            });
            for (k, r) in crit.into_iter().enumerate() {
                match r? {
                    Some((idx, loss)) => {
                        report.critic_losses[s + k] = Some(loss);
                        insensitive_batches.push(Some(idx));
                    }
                    None => insensitive_batches.push(None),
                }
            }

            self.last_phases.push(Phase::InsensitiveActor);
            let batches = &insensitive_batches;
            let act: Vec<Result<Option<f64>>> = par::map_mut(mode, &mut self.insensitive, |k, a| {
                let Some(idx) = &batches[k] else {
                    return Ok(None);
                };
                let batch: Vec<&JointTransition> = idx.iter().map(|&i| &buffer.items[i]).collect();
                let nets = &mut a.nets;
                update_insensitive_actor(&mut nets.actor, &nets.critic, &batch, k, &hp).map(Some)
            });
            for (k, r) in act.into_iter().enumerate() {
                if let Some(q) = r? {
                    report.actor_values[s + k] = Some(q);
                    self.last_ops.insensitive_actor += 1;
                    self.last_ops.server_critic += 1;
                }
            }
        }

        if report.trained() && strategy != Strategy::None {
            self.last_phases.push(Phase::Federation);
            self.fuse_critics(weights, strategy)?;
            self.federation_rounds += 1;
            self.last_ops.federation += 2;
            report.federated = true;
        }

        self.last_phases.push(Phase::TargetUpdate);
        let phi = hp.soft_update;
        for (a, trained) in self.sensitive.iter_mut().zip(sensitive_trained) {
            if trained {
                a.nets.sync_targets(phi)?;
                self.last_ops.sensitive_target += 2;
            }
        }
        for (a, batch) in self.insensitive.iter_mut().zip(&insensitive_batches) {
            if batch.is_some() {
                a.nets.sync_targets(phi)?;
                self.last_ops.insensitive_actor += 1;
                self.last_ops.server_critic += 1;
            }
        }
        Ok(report)
    }

    /// Replaces every critic in each shape class by the class's weighted fusion.
    fn fuse_critics(&mut self, weights: &[f64], strategy: Strategy) -> Result<()> {
        let s = self.sensitive.len();
        let mut sens: Vec<&mut Mlp> = self.sensitive.iter_mut().map(|a| &mut a.nets.critic).collect();
        aggregate_class(&mut sens, &weights[..s], strategy)?;
        let mut ins: Vec<&mut Mlp> = self.insensitive.iter_mut().map(|a| &mut a.nets.critic).collect();
        aggregate_class(&mut ins, &weights[s..], strategy)?;
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }
}
