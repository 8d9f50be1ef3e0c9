//! Twin-delayed deep deterministic policy gradient over the scalar risk state.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{reward, step_transition, RewardParams, TransitionParams};
use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::nn::{mse_loss, Activation, Adam, Mlp};

const CHECKPOINT_MAGIC: &[u8; 4] = b"TD3C";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    pub discount: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub policy_delay: usize,
    /// Target-policy smoothing noise sd, in budget units.
    pub policy_noise: f64,
    /// Bound on the smoothing noise, in budget units.
    pub noise_clip: f64,
    /// Behavior-policy noise sd, in budget units.
    pub explore_noise: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub hidden: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            discount: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            buffer_size: 100_000,
            batch_size: 64,
            policy_delay: 2,
            policy_noise: 0.2,
            noise_clip: 0.5,
            explore_noise: 0.1,
            episodes: 300,
            steps_per_episode: 200,
            hidden: 64,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(invalid(format!("discount {} outside [0, 1]", self.discount)));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(invalid("policy delay, batch size and hidden width must be positive"));
        }
        if self.buffer_size < self.batch_size {
            return Err(invalid("replay buffer must hold at least one batch"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(self.policy_noise >= 0.0 && self.noise_clip >= 0.0 && self.explore_noise >= 0.0) {
            return Err(invalid("noise parameters must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: f64,
    pub action: f64,
    pub reward: f64,
    pub next_state: f64,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            head: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
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

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items[self.head..].iter().chain(&self.items[..self.head])
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// The budget-allocation MDP with a constant energy proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyEnv {
    pub reward: RewardParams,
    pub transition: TransitionParams,
    pub energy: f64,
}

impl PrivacyEnv {
    pub fn new(reward: RewardParams, transition: TransitionParams) -> Self {
        Self {
            reward,
            transition,
            energy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.transition.validate()
    }

    pub fn step<R: Rng + ?Sized>(&self, s: f64, eps: f64, rng: &mut R) -> (f64, f64) {
        let eps = self.reward.clip(eps);
        let r = reward(eps, s, &self.reward, self.energy);
        (r, step_transition(s, eps, &self.reward, &self.transition, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub critic1: f64,
    pub critic2: f64,
    /// Most recent actor loss (carried between delayed updates).
    pub actor: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "critic1", "critic2", "actor", "reward"])?;
        for p in &self.points {
            w.serialize((p.step, p.critic1, p.critic2, p.actor, p.reward))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean critic loss (both critics) over the `window` steps ending at `step` (1-based).
    pub fn critic_moving_average(&self, step: usize, window: usize) -> Option<f64> {
        if step == 0 || step > self.points.len() || window == 0 {
            return None;
        }
        let start = step.saturating_sub(window);
        let slice = &self.points[start..step];
        Some(slice.iter().map(|p| 0.5 * (p.critic1 + p.critic2)).sum::<f64>() / slice.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub bounds: RewardParams,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    pub buffer: ReplayBuffer,
    updates: usize,
    last_actor_loss: f64,
    rng: ChaCha8Rng,
}

fn column(values: impl Iterator<Item = f64>) -> Array2<f32> {
    let v: Vec<f32> = values.map(|x| x as f32).collect();
    Array2::from_shape_vec((v.len(), 1), v).expect("column shape")
}

fn pairs(states: &[f64], actions: &[f64]) -> Array2<f32> {
    Array2::from_shape_fn((states.len(), 2), |(i, j)| {
        if j == 0 {
            states[i] as f32
        } else {
            actions[i] as f32
        }
    })
}

impl Td3Agent {
    /// Fresh networks; every target starts as an exact copy of its source.
    pub fn new(config: Td3Config, bounds: RewardParams, seed: u64) -> Result<Self> {
        config.validate()?;
        bounds.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let actor = Mlp::with_widths(&[1, h, h, 1], Activation::Tanh, Activation::Tanh, &mut rng);
        let critic1 = Mlp::with_widths(&[2, h, h, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let critic2 = Mlp::with_widths(&[2, h, h, 1], Activation::Tanh, Activation::Identity, &mut rng);
        Ok(Self {
            actor_opt: Adam::new(&actor, config.actor_lr as f32),
            critic1_opt: Adam::new(&critic1, config.critic_lr as f32),
            critic2_opt: Adam::new(&critic2, config.critic_lr as f32),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            buffer: ReplayBuffer::new(config.buffer_size),
            updates: 0,
            last_actor_loss: 0.0,
            rng,
            config,
            bounds,
        })
    }

    /// Maps a tanh output in [-1, 1] onto the budget interval.
    fn to_budget(&self, y: f64) -> f64 {
        self.bounds.clip(self.bounds.eps_min + 0.5 * (y + 1.0) * self.bounds.span())
    }

    fn to_unit(&self, eps: f64) -> f64 {
        2.0 * (eps - self.bounds.eps_min) / self.bounds.span() - 1.0
    }

    fn policy_batch(net: &Mlp, states: &[f64]) -> Vec<f64> {
        net.forward(&column(states.iter().copied()))
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }

    /// Deterministic policy output.
    pub fn policy(&self, s: f64) -> f64 {
        let y = Self::policy_batch(&self.actor, &[s.clamp(0.0, 1.0)])[0];
        self.to_budget(y)
    }

    /// Budget for state `s`, with Gaussian exploration noise when `explore`
    /// is set. The result is always inside the budget interval.
    pub fn act<R: Rng + ?Sized>(&self, s: f64, explore: bool, rng: &mut R) -> f64 {
        let mut eps = self.policy(s);
        if explore && self.config.explore_noise > 0.0 {
            eps += Normal::new(0.0, self.config.explore_noise).expect("validated sd").sample(rng);
        }
        self.bounds.clip(eps)
    }

    /// One gradient step for both critics and, every `policy_delay` calls, the
    /// actor plus soft target updates. Returns (critic1, critic2) losses.
    fn update(&mut self, step: usize) -> Result<(f64, f64)> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
        let states: Vec<f64> = batch.iter().map(|t| t.state).collect();
        let actions: Vec<f64> = batch.iter().map(|t| self.to_unit(t.action)).collect();
        let next: Vec<f64> = batch.iter().map(|t| t.next_state).collect();

        let smoothing = Normal::new(0.0, self.config.policy_noise.max(f64::MIN_POSITIVE)).expect("sd");
        let clip = self.config.noise_clip;
        let next_actions: Vec<f64> = Self::policy_batch(&self.actor_target, &next)
            .into_iter()
            .map(|y| {
                let noise = if self.config.policy_noise > 0.0 {
                    smoothing.sample(&mut self.rng).clamp(-clip, clip)
                } else {
                    0.0
                };
                assert!(noise.abs() <= clip, "smoothing noise escaped its clip");
                self.to_unit(self.bounds.clip(self.to_budget(y) + noise))
            })
            .collect();
        let next_in = pairs(&next, &next_actions);
        let q1 = self.critic1_target.forward(&next_in);
        let q2 = self.critic2_target.forward(&next_in);
        let targets = column(batch.iter().enumerate().map(|(i, t)| {
            t.reward + self.config.discount * f64::from(q1[[i, 0]].min(q2[[i, 0]]))
        }));

        let input = pairs(&states, &actions);
        let mut losses = [0.0f64; 2];
        for (k, (critic, opt)) in [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ]
        .into_iter()
        .enumerate()
        {
            let trace = critic.forward_trace(&input);
            let (loss, grad) = mse_loss(trace.output(), &targets);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("critic {} loss", k + 1),
                });
            }
            let (grads, _) = critic.backward(&trace, &grad);
            opt.apply(critic, &grads);
            losses[k] = f64::from(loss);
        }

        self.updates += 1;
        if self.updates % self.config.policy_delay == 0 {
            let s_col = column(states.iter().copied());
            let actor_trace = self.actor.forward_trace(&s_col);
            let unit = actor_trace.output();
            let mut critic_in = Array2::<f32>::zeros((states.len(), 2));
            critic_in.column_mut(0).assign(&s_col.column(0));
            critic_in.column_mut(1).assign(&unit.column(0));
            let critic_trace = self.critic1.forward_trace(&critic_in);
            let n = states.len() as f32;
            let q_mean = critic_trace.output().mean().unwrap_or(0.0);
            let grad_q = Array2::from_elem((states.len(), 1), -1.0 / n);
            let (_, grad_in) = self.critic1.backward(&critic_trace, &grad_q);
            let grad_action = grad_in.index_axis(Axis(1), 1).to_owned().insert_axis(Axis(1));
            let (grads, _) = self.actor.backward(&actor_trace, &grad_action);
            if !q_mean.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: "actor objective".into(),
                });
            }
            self.actor_opt.apply(&mut self.actor, &grads);
            self.last_actor_loss = -f64::from(q_mean);
            let tau = self.config.tau as f32;
            self.critic1_target.soft_update_from(&self.critic1, tau);
            self.critic2_target.soft_update_from(&self.critic2, tau);
            self.actor_target.soft_update_from(&self.actor, tau);
        }
        Ok((losses[0], losses[1]))
    }

    /// Runs `episodes × steps` interaction steps from the current networks,
    /// starting each episode at a uniformly drawn risk, with one update per step.
    pub fn train_steps(&mut self, env: &PrivacyEnv, episodes: usize, steps: usize) -> Result<TrainingCurve> {
        env.validate()?;
        let mut curve = TrainingCurve::default();
        let mut global = 0;
        for _ in 0..episodes {
            let mut s: f64 = self.rng.random();
            for _ in 0..steps {
                global += 1;
                let mut rng = self.rng.clone();
                let eps = self.act(s, true, &mut rng);
                let (r, next) = env.step(s, eps, &mut rng);
                self.rng = rng;
                self.buffer.push(Transition {
                    state: s,
                    action: eps,
                    reward: r,
                    next_state: next,
                });
                let (c1, c2) = self.update(global)?;
                curve.points.push(CurvePoint {
                    step: global,
                    critic1: c1,
                    critic2: c2,
                    actor: self.last_actor_loss,
                    reward: r,
                });
                s = next;
            }
        }
        Ok(curve)
    }

    /// Full training run with the configured episode count and length.
    pub fn train(config: Td3Config, env: &PrivacyEnv, seed: u64) -> Result<(Self, TrainingCurve)> {
        let mut agent = Self::new(config, env.reward, seed)?;
        let curve = agent.train_steps(env, agent.config.episodes, agent.config.steps_per_episode)?;
        Ok((agent, curve))
    }

    /// Continues training after the reward weights changed.
    pub fn fine_tune(&mut self, env: &PrivacyEnv, steps: usize) -> Result<TrainingCurve> {
        self.bounds = env.reward;
        self.train_steps(env, 1, steps)
    }

    /// Policy outputs on an evenly spaced grid over [0, 1].
    pub fn policy_grid(&self, points: usize) -> Vec<(f64, f64)> {
        (0..points)
            .map(|i| {
                let s = if points > 1 { i as f64 / (points - 1) as f64 } else { 0.0 };
                (s, self.policy(s))
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let c = &self.config;
        for v in [c.discount, c.tau, c.actor_lr, c.critic_lr, c.policy_noise, c.noise_clip, c.explore_noise] {
            w.f64(v);
        }
        for v in [c.buffer_size, c.batch_size, c.policy_delay, c.episodes, c.steps_per_episode, c.hidden] {
            w.u64(v as u64);
        }
        let b = &self.bounds;
        for v in [b.alpha, b.beta, b.lambda_e, b.kappa, b.s0, b.delta, b.rho, b.g0, b.eps_min, b.eps_max] {
            w.f64(v);
        }
        for net in [
            &self.actor,
            &self.actor_target,
            &self.critic1,
            &self.critic2,
            &self.critic1_target,
            &self.critic2_target,
        ] {
            net.write_to(&mut w);
        }
        w.into_bytes()
    }

    /// Restores networks and parameters. Optimizer moments and the replay
    /// buffer are not persisted; `seed` reseeds the agent's random stream.
    pub fn from_bytes(bytes: &[u8], seed: u64) -> Result<Self> {
        let mut r = Reader::with_header(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut f = [0.0; 7];
        for v in &mut f {
            *v = r.f64()?;
        }
        let mut u = [0usize; 6];
        for v in &mut u {
            *v = r.u64()? as usize;
        }
        let config = Td3Config {
            discount: f[0],
            tau: f[1],
            actor_lr: f[2],
            critic_lr: f[3],
            policy_noise: f[4],
            noise_clip: f[5],
            explore_noise: f[6],
            buffer_size: u[0],
            batch_size: u[1],
            policy_delay: u[2],
            episodes: u[3],
            steps_per_episode: u[4],
            hidden: u[5],
        };
        let mut p = [0.0; 10];
        for v in &mut p {
            *v = r.f64()?;
        }
        let bounds = RewardParams {
            alpha: p[0],
            beta: p[1],
            lambda_e: p[2],
            kappa: p[3],
            s0: p[4],
            delta: p[5],
            rho: p[6],
            g0: p[7],
            eps_min: p[8],
            eps_max: p[9],
        };
        let mut nets = (0..6).map(|_| Mlp::read_from(&mut r)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let mut agent = Self::new(config, bounds, seed)?;
        agent.critic2_target = nets.pop().expect("six nets");
        agent.critic1_target = nets.pop().expect("six nets");
        agent.critic2 = nets.pop().expect("six nets");
        agent.critic1 = nets.pop().expect("six nets");
        agent.actor_target = nets.pop().expect("six nets");
        agent.actor = nets.pop().expect("six nets");
        agent.actor_opt = Adam::new(&agent.actor, agent.config.actor_lr as f32);
        agent.critic1_opt = Adam::new(&agent.critic1, agent.config.critic_lr as f32);
        agent.critic2_opt = Adam::new(&agent.critic2, agent.config.critic_lr as f32);
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, seed)
    }
}
