//! Training loop: alternating state/observation behavioural episodes, a
//! shared replay buffer and per-episode optimisation of both modules, plus
//! the baseline and ablation variants.

mod gradsuite;
mod losses;
mod rollout;
mod schedule;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    bellman_targets, critic_loss, entropy, obs_critic_input, obs_critic_targets, obs_losses,
    s_map_loss, s_map_object_errors, state_attention_loss, state_critic_targets, AlignmentBatch,
    Batch, LossGrads, ObsLosses, StateAttentionLoss,
};
pub use gradsuite::{loss_gradient_suite, SuiteResult};
pub use rollout::{parallel_map, run_episode, Episode};
pub use schedule::Scheduler;

use crate::agents::{
    adapt_param_noise, ArchConfig, BehaviourPolicy, CriticInput, EnvDims, ModuleLayout,
    NetworkSet, ObsPolicy, ParamNoiseState, StatePolicy,
};
use crate::alignment::{
    attention_target, object_attention, pixel_weights, uniform_object_attention, ObjectAttention,
};
use crate::autodiff::{polyak_update, Adam};
use crate::env::{adjacency_matrix, splitmix64, DomainConfig};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, SharedReplay, Source, Transition, TransitionShape, REPLAY_CAPACITY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmVariant {
    April,
    /// No attention alignment term.
    AprilNoSup,
    /// Each module samples only its own agent's transitions.
    AprilNoShare,
    /// Uniform object attention in the alignment target.
    AprilNoBack,
    /// Image actor with an image critic.
    Ddpg,
    /// Image actor with a state critic.
    AsymDdpg,
    /// Asymmetric DDPG whose actor regresses the state from a bottleneck.
    SMapAsymDdpg,
}

/// Where the observation attention target comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentMode {
    Off,
    StateAttention,
    Uniform,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 7] = [
        Self::April,
        Self::AprilNoSup,
        Self::AprilNoShare,
        Self::AprilNoBack,
        Self::Ddpg,
        Self::AsymDdpg,
        Self::SMapAsymDdpg,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::April => "april",
            Self::AprilNoSup => "april-no-sup",
            Self::AprilNoShare => "april-no-share",
            Self::AprilNoBack => "april-no-back",
            Self::Ddpg => "ddpg",
            Self::AsymDdpg => "asym-ddpg",
            Self::SMapAsymDdpg => "s-map-asym-ddpg",
        }
    }

    /// Whether a state-based agent is trained and collects half the episodes.
    pub fn has_state_agent(self) -> bool {
        matches!(
            self,
            Self::April | Self::AprilNoSup | Self::AprilNoShare | Self::AprilNoBack
        )
    }

    pub fn alignment(self) -> AlignmentMode {
        match self {
            Self::April | Self::AprilNoShare => AlignmentMode::StateAttention,
            Self::AprilNoBack => AlignmentMode::Uniform,
            _ => AlignmentMode::Off,
        }
    }

    pub fn shared_replay(self) -> bool {
        self != Self::AprilNoShare
    }

    pub fn layout(self) -> ModuleLayout {
        let april = self.has_state_agent();
        ModuleLayout {
            state_module: april,
            obs_attention: april,
            obs_critic: if self == Self::Ddpg {
                CriticInput::Image
            } else {
                CriticInput::State
            },
            state_bottleneck: self == Self::SMapAsymDdpg,
        }
    }

    /// Behavioural policy of episode `episode` (0-based): even episodes use
    /// the observation agent, odd ones the state agent.
    pub fn behaviour_source(self, episode: u64) -> Source {
        if self.has_state_agent() && episode % 2 == 1 {
            Source::StateAgent
        } else {
            Source::ObsAgent
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|v| v.label()).collect();
                Error::Config(format!("unknown variant {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub gamma: f64,
    /// Weight of the state-attention entropy penalty.
    pub beta: f64,
    /// Weight of the Q term in the observation-attention loss.
    pub nu: f64,
    /// Polyak coefficient: `target <- tau * target + (1 - tau) * online`.
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_attention: f64,
    /// Optimisation iterations per collected episode.
    pub opt_steps: usize,
    pub batch_size: usize,
    pub max_episodes: u64,
    /// Optional environment-step budget; training stops at whichever limit comes first.
    pub max_env_steps: Option<u64>,
    pub replay_capacity: usize,
    /// Drop the bootstrap term on terminal transitions.
    pub terminal_mask: bool,
    pub eval_every: u64,
    pub eval_domains: usize,
    pub workers: usize,
    pub noise: ParamNoiseState,
    /// Perturb the attention network along with the actor during exploration.
    pub perturb_attention: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 0.0008,
            nu: 1.0,
            tau: 0.999,
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            lr_attention: 1e-4,
            opt_steps: 50,
            batch_size: 64,
            max_episodes: 2000,
            max_env_steps: None,
            replay_capacity: REPLAY_CAPACITY,
            terminal_mask: true,
            eval_every: 50,
            eval_domains: 20,
            workers: 4,
            noise: ParamNoiseState::default(),
            perturb_attention: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("hyperparameters: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.nu >= 0.0) {
            return bad("beta and nu must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.lr_critic > 0.0 && self.lr_actor > 0.0 && self.lr_attention > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.opt_steps == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("optimisation steps, batch size and replay capacity must be positive");
        }
        if self.eval_every == 0 || self.eval_domains == 0 || self.workers == 0 {
            return bad("evaluation cadence, evaluation domains and workers must be positive");
        }
        if !(self.noise.sigma > 0.0 && self.noise.desired > 0.0 && self.noise.alpha > 1.0) {
            return bad("parameter noise needs positive sigma and desired distance, alpha > 1");
        }
        Ok(())
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub domain: DomainConfig,
    pub arch: ArchConfig,
}

impl TrainConfig {
    pub fn new(variant: AlgorithmVariant, seed: u64, resolution: usize) -> Self {
        Self {
            variant,
            seed,
            hyper: Hyperparams::default(),
            domain: DomainConfig::training(resolution),
            arch: ArchConfig::navworld(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.domain.validate()
    }

    pub fn dims(&self) -> EnvDims {
        EnvDims {
            state_dim: self.domain.state_dim(),
            resolution: self.domain.resolution,
            max_speed: self.domain.max_speed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Empty network set with this run's shapes, e.g. for loading checkpoints.
    pub fn build_networks(&self) -> Result<NetworkSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.stream(Stream::Init, 0));
        let mut nets = NetworkSet::build(self.dims(), &self.arch, self.variant.layout(), &mut rng)?;
        nets.state_noise = self.hyper.noise;
        nets.obs_noise = self.hyper.noise;
        Ok(nets)
    }

    /// Environment seed of training episode `episode` (with `domain`).
    pub fn training_scene(&self, episode: u64) -> u64 {
        self.stream(Stream::EnvSeed, episode)
    }

    fn stream(&self, stream: Stream, index: u64) -> u64 {
        splitmix64(splitmix64(self.seed ^ ((stream as u64) << 56)) ^ index)
    }
}

/// Independent random streams of a run.
#[derive(Clone, Copy)]
enum Stream {
    Init = 1,
    Learner = 2,
    EnvSeed = 3,
    Perturb = 4,
    Action = 5,
    Eval = 6,
}

/// One replay pool shared by both modules, or one pool per behavioural agent.
#[derive(Clone, Debug)]
pub enum ReplayPools {
    Shared(SharedReplay),
    Separate { state: SharedReplay, obs: SharedReplay },
}

impl ReplayPools {
    pub fn new(shared: bool, capacity: usize, shape: TransitionShape) -> Result<Self> {
        let pool = || ReplayBuffer::new(capacity, shape).map(SharedReplay::new);
        Ok(if shared {
            Self::Shared(pool()?)
        } else {
            Self::Separate {
                state: pool()?,
                obs: pool()?,
            }
        })
    }

    /// Pool the given module samples from (and its agent writes to).
    pub fn pool(&self, source: Source) -> &SharedReplay {
        match (self, source) {
            (Self::Shared(p), _) => p,
            (Self::Separate { state, .. }, Source::StateAgent) => state,
            (Self::Separate { obs, .. }, Source::ObsAgent) => obs,
        }
    }

    pub fn append_episode(&self, ep: &Episode) -> Result<()> {
        self.pool(ep.source).append_all(ep.transitions.iter().cloned())
    }

    /// Lifetime `(state agent, obs agent)` counts over all pools.
    pub fn source_balance(&self) -> (u64, u64) {
        match self {
            Self::Shared(p) => p.source_balance(),
            Self::Separate { state, obs } => {
                let (a, b) = state.source_balance();
                let (c, d) = obs.source_balance();
                (a + c, b + d)
            }
        }
    }
}

/// Mean losses of one optimisation iteration (or averaged over several).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossRecord {
    pub critic_state: Option<f64>,
    pub actor_state: Option<f64>,
    pub entropy_state: Option<f64>,
    pub critic_obs: Option<f64>,
    pub actor_obs: Option<f64>,
    pub attention_obs: Option<f64>,
    pub alignment: Option<f64>,
    pub s_map: Option<f64>,
}

impl LossRecord {
    fn fields(&self) -> [Option<f64>; 8] {
        [
            self.critic_state,
            self.actor_state,
            self.entropy_state,
            self.critic_obs,
            self.actor_obs,
            self.attention_obs,
            self.alignment,
            self.s_map,
        ]
    }

    fn from_fields(f: [Option<f64>; 8]) -> Self {
        Self {
            critic_state: f[0],
            actor_state: f[1],
            entropy_state: f[2],
            critic_obs: f[3],
            actor_obs: f[4],
            attention_obs: f[5],
            alignment: f[6],
            s_map: f[7],
        }
    }

    /// Field-wise mean over the records where the field is present.
    pub fn mean(records: &[LossRecord]) -> LossRecord {
        let mut sums = [(0.0, 0usize); 8];
        for r in records {
            for (s, v) in sums.iter_mut().zip(r.fields()) {
                if let Some(v) = v {
                    s.0 += v;
                    s.1 += 1;
                }
            }
        }
        Self::from_fields(sums.map(|(s, n)| (n > 0).then(|| s / n as f64)))
    }

    fn check_finite(&self) -> Result<()> {
        const NAMES: [&str; 8] = [
            "state critic",
            "state actor",
            "state entropy",
            "obs critic",
            "obs actor",
            "obs attention",
            "alignment",
            "s-map",
        ];
        for (name, v) in NAMES.iter().zip(self.fields()) {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{name} loss is {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub losses: LossRecord,
    /// Object attention used for each alignment target of this iteration.
    pub object_attention: Vec<ObjectAttention>,
}

#[derive(Clone, Debug)]
struct Optimisers {
    q_s: Option<Adam>,
    pi_s: Option<Adam>,
    h_s: Option<Adam>,
    q_o: Adam,
    pi_o: Adam,
    h_o: Option<Adam>,
}

/// Owns the networks and optimiser state; the only mutator of parameters.
#[derive(Clone, Debug)]
pub struct Learner {
    pub nets: NetworkSet,
    variant: AlgorithmVariant,
    hyper: Hyperparams,
    adjacency: Vec<Vec<f64>>,
    opt: Optimisers,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let nets = config.build_networks()?;
        Ok(Self::from_networks(config, nets))
    }

    pub fn from_networks(config: &TrainConfig, nets: NetworkSet) -> Self {
        let h = &config.hyper;
        let opt = Optimisers {
            q_s: nets.state.as_ref().map(|m| Adam::new(h.lr_critic, m.critic.params())),
            pi_s: nets.state.as_ref().map(|m| Adam::new(h.lr_actor, m.actor.params())),
            h_s: nets.state.as_ref().map(|m| Adam::new(h.lr_attention, m.attention.params())),
            q_o: Adam::new(h.lr_critic, nets.obs.critic.params()),
            pi_o: Adam::new(h.lr_actor, nets.obs.actor.params()),
            h_o: nets.obs.attention.as_ref().map(|g| Adam::new(h.lr_attention, g.params())),
        };
        Self {
            adjacency: adjacency_matrix(config.domain.object_count()),
            nets,
            variant: config.variant,
            hyper: config.hyper.clone(),
            opt,
            rng: ChaCha8Rng::seed_from_u64(config.stream(Stream::Learner, 0)),
        }
    }

    pub fn variant(&self) -> AlgorithmVariant {
        self.variant
    }

    /// Alignment targets for a batch, from the current state attention (or
    /// uniform object attention).
    pub fn alignment_batch(&self, batch: &Batch) -> Result<Option<(AlignmentBatch, Vec<ObjectAttention>)>> {
        let cs: Vec<ObjectAttention> = match self.variant.alignment() {
            AlignmentMode::Off => return Ok(None),
            AlignmentMode::Uniform => {
                vec![uniform_object_attention(self.adjacency.len()); batch.len()]
            }
            AlignmentMode::StateAttention => {
                let m = self.nets.state.as_ref().ok_or_else(|| {
                    Error::Usage("state-attention alignment without a state module".into())
                })?;
                let h = m.attention.infer(&batch.states, None)?;
                (0..batch.len())
                    .map(|b| object_attention(&self.adjacency, h.sample(b)))
                    .collect::<Result<_>>()?
            }
        };
        let mut targets = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        for (c, z) in cs.iter().zip(&batch.segmentation) {
            targets.push(attention_target(c, z)?);
            weights.push(pixel_weights(z)?);
        }
        Ok(Some((AlignmentBatch { targets, weights }, cs)))
    }

    /// One minibatch pass: state critic, state actor and attention, then the
    /// alignment targets from the updated state attention, then the
    /// observation critic, actor and attention, then all target networks.
    /// Returns `None` while the replay holds fewer transitions than a batch.
    pub fn optimise_iteration(&mut self, pools: &ReplayPools) -> Result<Option<IterationRecord>> {
        let b = self.hyper.batch_size;
        let draw = |pool: &SharedReplay, rng: &mut ChaCha8Rng| -> Option<Vec<Arc<Transition>>> {
            if pool.with(|r| r.is_ready(b)) {
                pool.sample_minibatch(b, rng)
            } else {
                None
            }
        };
        let (state_batch, obs_batch) = match pools {
            ReplayPools::Shared(pool) => match draw(pool, &mut self.rng) {
                Some(ts) => {
                    let batch = Batch::new(&ts, &self.nets.normaliser, true)?;
                    (self.nets.state.is_some().then(|| batch.clone()), Some(batch))
                }
                None => (None, None),
            },
            ReplayPools::Separate { state, obs } => {
                let sb = match draw(state, &mut self.rng) {
                    Some(ts) if self.nets.state.is_some() => {
                        Some(Batch::new(&ts, &self.nets.normaliser, false)?)
                    }
                    _ => None,
                };
                let ob = draw(obs, &mut self.rng)
                    .map(|ts| Batch::new(&ts, &self.nets.normaliser, true))
                    .transpose()?;
                (sb, ob)
            }
        };
        if state_batch.is_none() && obs_batch.is_none() {
            return Ok(None);
        }
        let h = self.hyper.clone();
        let mut rec = LossRecord::default();

        if let (Some(batch), Some(m)) = (&state_batch, self.nets.state.as_mut()) {
            let y = state_critic_targets(m, batch, h.gamma, h.terminal_mask)?;
            let c = critic_loss(&m.critic, &batch.states, &batch.actions, &y)?;
            step(&mut self.opt.q_s, m.critic.params_mut(), &c.grads)?;
            let a = state_attention_loss(m, &batch.states, h.beta)?;
            step(&mut self.opt.pi_s, m.actor.params_mut(), &a.actor)?;
            step(&mut self.opt.h_s, m.attention.params_mut(), &a.attention)?;
            rec.critic_state = Some(c.loss);
            rec.actor_state = Some(a.loss);
            rec.entropy_state = Some(a.entropy_mean);
        }

        let mut object_attention = Vec::new();
        if let Some(batch) = &obs_batch {
            let alignment = self.alignment_batch(batch)?;
            let m = &mut self.nets.obs;
            let y = obs_critic_targets(m, batch, h.gamma, h.terminal_mask)?;
            let input = obs_critic_input(m, batch)?;
            let c = critic_loss(&m.critic, input, &batch.actions, &y)?;
            self.opt.q_o.step(m.critic.params_mut(), &c.grads)?;
            let input = obs_critic_input(m, batch)?;
            let s_map_targets = m.bottleneck.map(|_| &batch.states);
            let o = obs_losses(
                m,
                input,
                batch.images()?.0,
                alignment.as_ref().map(|(a, _)| a),
                h.nu,
                s_map_targets,
            )?;
            self.opt.pi_o.step(m.actor.params_mut(), &o.actor_grads)?;
            if let (Some(g), Some(grads)) = (m.attention.as_mut(), &o.attention_grads) {
                step(&mut self.opt.h_o, g.params_mut(), grads)?;
            }
            rec.critic_obs = Some(c.loss);
            rec.actor_obs = Some(o.actor);
            rec.attention_obs = o.attention;
            rec.alignment = o.alignment;
            rec.s_map = o.s_map;
            if let Some((_, cs)) = alignment {
                object_attention = cs;
            }
        }
        rec.check_finite()?;
        self.update_targets()?;
        Ok(Some(IterationRecord {
            losses: rec,
            object_attention,
        }))
    }

    /// Polyak update of all target networks.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.hyper.tau;
        if let Some(m) = self.nets.state.as_mut() {
            polyak_update(m.target_critic.params_mut(), m.critic.params(), tau)?;
            polyak_update(m.target_actor.params_mut(), m.actor.params(), tau)?;
        }
        let m = &mut self.nets.obs;
        polyak_update(m.target_critic.params_mut(), m.critic.params(), tau)?;
        polyak_update(m.target_actor.params_mut(), m.actor.params(), tau)?;
        Ok(())
    }

    /// Measures clean-vs-perturbed action distance of one behavioural policy
    /// on a replay minibatch and adapts its noise scale.
    pub fn adapt_noise(&mut self, pools: &ReplayPools, source: Source) -> Result<Option<f64>> {
        let b = self.hyper.batch_size;
        let Some(ts) = pools.pool(source).sample_minibatch(b, &mut self.rng) else {
            return Ok(None);
        };
        let attention_too = self.hyper.perturb_attention;
        let a_max = self.nets.dims.max_speed;
        let d = match source {
            Source::StateAgent => {
                let Some(m) = self.nets.state.as_ref() else {
                    return Ok(None);
                };
                let batch = Batch::new(&ts, &self.nets.normaliser, false)?;
                let clean = StatePolicy::from_module(m);
                let noisy = clean.perturbed(self.nets.state_noise.sigma, attention_too, &mut self.rng);
                let (a, p) = (clean.act_batch(&batch.states)?, noisy.act_batch(&batch.states)?);
                adapt_param_noise(&mut self.nets.state_noise, &a, &p, a_max)
            }
            Source::ObsAgent => {
                let obs = crate::agents::obs_batch(&ts.iter().map(|t| &t.obs).collect::<Vec<_>>())?;
                let clean = ObsPolicy::from_module(&self.nets.obs);
                let noisy = clean.perturbed(self.nets.obs_noise.sigma, attention_too, &mut self.rng);
                let (a, p) = (clean.act_batch(&obs)?, noisy.act_batch(&obs)?);
                adapt_param_noise(&mut self.nets.obs_noise, &a, &p, a_max)
            }
        };
        Ok(Some(d))
    }
}

fn step(opt: &mut Option<Adam>, params: &mut [crate::autodiff::Tensor], grads: &[crate::autodiff::Tensor]) -> Result<()> {
    opt.as_mut()
        .ok_or_else(|| Error::Usage("no optimiser for this network".into()))?
        .step(params, grads)
}

/// Greedy evaluation returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalStats {
    pub fn of(returns: &[f64]) -> Self {
        let n = returns.len().max(1) as f64;
        Self {
            mean: returns.iter().sum::<f64>() / n,
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Noise-free policy of one module.
pub fn greedy_policy(nets: &NetworkSet, source: Source) -> Result<BehaviourPolicy> {
    Ok(match source {
        Source::ObsAgent => BehaviourPolicy::Obs(ObsPolicy::from_module(&nets.obs)),
        Source::StateAgent => BehaviourPolicy::State(StatePolicy::from_module(
            nets.state
                .as_ref()
                .ok_or_else(|| Error::Usage("network set has no state module".into()))?,
        )),
    })
}

/// Undiscounted returns of `policy` on each `(domain, env seed)`, in order.
pub fn evaluate_policy(
    nets: &NetworkSet,
    policy: &BehaviourPolicy,
    domains: &[(DomainConfig, u64)],
    workers: usize,
) -> Result<Vec<f64>> {
    parallel_map(domains, workers, |(d, seed)| {
        run_episode(d, *seed, policy, &nets.normaliser, Source::ObsAgent, *seed).map(|e| e.ret)
    })
    .into_iter()
    .collect()
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: u64,
    pub env_steps: u64,
    pub source: Source,
    pub episode_return: f64,
    pub iterations: usize,
    pub losses: LossRecord,
    pub sigma_state: f64,
    pub sigma_obs: f64,
    /// Image policy, present at evaluation points.
    pub eval: Option<EvalStats>,
    /// State policy mean return, at evaluation points of state-agent variants.
    pub eval_state: Option<f64>,
}

pub const LOG_HEADER: [&str; 20] = [
    "episode",
    "env_steps",
    "policy",
    "episode_return",
    "iterations",
    "critic_state",
    "actor_state",
    "entropy_state",
    "critic_obs",
    "actor_obs",
    "attention_obs",
    "alignment",
    "s_map",
    "sigma_state",
    "sigma_obs",
    "eval_mean",
    "eval_min",
    "eval_max",
    "eval_state_mean",
    "replay_balance",
];

fn opt_field(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl LogRow {
    fn record(&self, balance: (u64, u64)) -> Vec<String> {
        let mut r = vec![
            self.episode.to_string(),
            self.env_steps.to_string(),
            match self.source {
                Source::StateAgent => "state".into(),
                Source::ObsAgent => "obs".into(),
            },
            self.episode_return.to_string(),
            self.iterations.to_string(),
        ];
        r.extend(self.losses.fields().map(opt_field));
        r.push(self.sigma_state.to_string());
        r.push(self.sigma_obs.to_string());
        r.push(opt_field(self.eval.map(|e| e.mean)));
        r.push(opt_field(self.eval.map(|e| e.min)));
        r.push(opt_field(self.eval.map(|e| e.max)));
        r.push(opt_field(self.eval_state));
        r.push(format!("{}/{}", balance.0, balance.1));
        r
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub nets: NetworkSet,
    pub env_steps: u64,
    pub episodes: u64,
    /// Lifetime `(state agent, obs agent)` transition counts.
    pub replay_balance: (u64, u64),
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    /// `(env_steps, eval mean)` at every evaluation point.
    pub fn eval_curve(&self) -> Vec<(u64, f64)> {
        self.log
            .iter()
            .filter_map(|r| r.eval.map(|e| (r.env_steps, e.mean)))
            .collect()
    }
}

pub fn write_log_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(LOG_HEADER).map_err(crate::env::csv_err)
}

/// Runs training. With `out`, writes `config.txt`, `log.csv` and
/// `checkpoints/` under that directory.
pub fn run(config: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let h = &config.hyper;
    let mut learner = Learner::new(config)?;
    let shape = TransitionShape {
        state_dim: config.domain.state_dim(),
        resolution: config.domain.resolution,
        objects: config.domain.object_count(),
    };
    let pools = ReplayPools::new(config.variant.shared_replay(), h.replay_capacity, shape)?;

    let mut log_writer = None;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::write(dir.join("config.txt"), config.to_toml())?;
        let mut w = csv::Writer::from_path(dir.join("log.csv")).map_err(crate::env::csv_err)?;
        write_log_header(&mut w)?;
        log_writer = Some(w);
    }

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut env_steps = 0u64;
    let mut episode = 0u64;
    let budget = h.max_env_steps.unwrap_or(u64::MAX);
    let mut scheduler = Scheduler::new(config.variant, config.domain.max_steps);
    // launch index; keys the per-episode random streams
    let mut launched = 0u64;
    while episode < h.max_episodes && env_steps < budget {
        let round = (h.workers as u64).min(h.max_episodes - episode);
        let mut sources = Vec::with_capacity(round as usize);
        for k in 0..round {
            let next = episode + scheduler.waiting() as u64 + k;
            sources.push(scheduler.next_source(next, &sources));
        }
        let jobs: Vec<(u64, Source, BehaviourPolicy)> = sources
            .iter()
            .enumerate()
            .map(|(k, &source)| {
                let e = launched + k as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(config.stream(Stream::Perturb, e));
                let attention_too = h.perturb_attention;
                let policy = match source {
                    Source::StateAgent => {
                        let m = learner.nets.state.as_ref().expect("state agent has a state module");
                        BehaviourPolicy::State(StatePolicy::from_module(m).perturbed(
                            learner.nets.state_noise.sigma,
                            attention_too,
                            &mut rng,
                        ))
                    }
                    Source::ObsAgent => BehaviourPolicy::Obs(
                        ObsPolicy::from_module(&learner.nets.obs).perturbed(
                            learner.nets.obs_noise.sigma,
                            attention_too,
                            &mut rng,
                        ),
                    ),
                };
                (e, source, policy)
            })
            .collect();
        let normaliser = learner.nets.normaliser.clone();
        let episodes = parallel_map(&jobs, h.workers, |(e, source, policy)| {
            run_episode(
                &config.domain,
                config.stream(Stream::EnvSeed, *e),
                policy,
                &normaliser,
                *source,
                config.stream(Stream::Action, *e),
            )
        });

        launched += round;
        let finished = episodes
            .into_iter()
            .map(|ep| ep.map(|ep| (ep.source, ep.len() as u64, ep)))
            .collect::<Result<Vec<_>>>()?;
        for (_, ep) in scheduler.admit(finished) {
            for t in &ep.transitions {
                learner.nets.normaliser.update(&t.state);
            }
            pools.append_episode(&ep)?;
            env_steps += ep.len() as u64;

            let mut records = Vec::with_capacity(h.opt_steps);
            for _ in 0..h.opt_steps {
                match learner.optimise_iteration(&pools) {
                    Ok(Some(r)) => records.push(r.losses),
                    Ok(None) => break,
                    Err(e) => return Err(diverged(&learner, out, episode, e)),
                }
            }
            learner.adapt_noise(&pools, ep.source)?;

            let mut row = LogRow {
                episode,
                env_steps,
                source: ep.source,
                episode_return: ep.ret,
                iterations: records.len(),
                losses: LossRecord::mean(&records),
                sigma_state: learner.nets.state_noise.sigma,
                sigma_obs: learner.nets.obs_noise.sigma,
                eval: None,
                eval_state: None,
            };
            episode += 1;
            let last = episode == h.max_episodes || env_steps >= budget;
            if episode.is_multiple_of(h.eval_every) || last {
                let domains: Vec<(DomainConfig, u64)> = (0..h.eval_domains as u64)
                    .map(|i| {
                        (config.domain.clone(), config.stream(Stream::Eval, episode << 20 | i))
                    })
                    .collect();
                let obs = greedy_policy(&learner.nets, Source::ObsAgent)?;
                row.eval = Some(EvalStats::of(&evaluate_policy(&learner.nets, &obs, &domains, h.workers)?));
                if learner.nets.state.is_some() {
                    let sp = greedy_policy(&learner.nets, Source::StateAgent)?;
                    row.eval_state = Some(EvalStats::of(&evaluate_policy(&learner.nets, &sp, &domains, h.workers)?).mean);
                }
                if let Some(dir) = out {
                    let path = dir.join("checkpoints").join(format!("ep{episode:06}.ckpt"));
                    learner.nets.to_checkpoint().save(&path)?;
                    checkpoints.push(path);
                }
            }
            if let Some(w) = log_writer.as_mut() {
                w.write_record(row.record(pools.source_balance()))
                    .map_err(crate::env::csv_err)?;
                w.flush()?;
            }
            log.push(row);
            if last {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        log,
        replay_balance: pools.source_balance(),
        nets: learner.nets,
        env_steps,
        episodes: episode,
        checkpoints,
    })
}

fn diverged(learner: &Learner, out: Option<&Path>, episode: u64, err: Error) -> Error {
    let mut note = String::new();
    if let Some(dir) = out {
        let path = dir.join("checkpoints").join("diverged.ckpt");
        if learner.nets.to_checkpoint().save(&path).is_ok() {
            note = format!("; networks saved to {}", path.display());
        }
    }
    match err {
        Error::NonFinite(m) => Error::NonFinite(format!("training diverged at episode {episode}: {m}{note}")),
        other => other,
    }
}
