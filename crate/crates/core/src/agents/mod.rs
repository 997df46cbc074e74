//! The six networks of the two actor-critic modules and the behavioural
//! machinery around them (running state normalisation, parameter noise).
//!
//! State module: critic `Q_s(s, a)`, actor `pi_s(h_s(s) * s)`, attention
//! `h_s` (softmax over state dimensions). Observation module: critic
//! `Q_o(s, a)` (or `Q_o(o, a)` for the symmetric image baseline), actor
//! `pi_o(h_o(o) * o)`, attention `h_o` (per-pixel sigmoid tiled over RGB).

mod networks;
mod noise;
mod normaliser;
mod policy;

pub use networks::{
    build_critic, build_image_critic, build_obs_actor, build_obs_attention, build_state_actor,
    build_state_attention, ArchConfig, ConvSpec, CriticInput, EnvDims, ModuleLayout, NetworkSet,
    ObsModule, StateModule,
};
pub use noise::{action_distance, ParamNoiseState};
pub use normaliser::RunningNormaliser;
pub use policy::{
    act_obs, act_state, adapt_param_noise, obs_batch, BehaviourPolicy, ObsPolicy, StatePolicy,
};
