use rand::Rng;

use super::{action_distance, NetworkSet, ObsModule, ParamNoiseState, RunningNormaliser, StateModule};
use crate::autodiff::{Graph, Tensor};
use crate::env::{Frame, Observation};
use crate::error::Result;

/// Stacks observations into a `[B, 3, H, W]` tensor with values in `[0, 1]`.
pub fn obs_batch(observations: &[&Observation]) -> Result<Tensor> {
    let size = observations.first().map_or(0, |o| o.size());
    let mut data = Vec::with_capacity(observations.len() * 3 * size * size);
    for o in observations {
        data.extend(o.to_planar());
    }
    Tensor::new(vec![observations.len(), 3, size, size], data)
}

/// Attention plus actor of the state module, clean or perturbed.
#[derive(Clone, Debug)]
pub struct StatePolicy {
    pub actor: Graph,
    pub attention: Graph,
}

impl StatePolicy {
    pub fn from_module(m: &StateModule) -> Self {
        Self {
            actor: m.actor.clone(),
            attention: m.attention.clone(),
        }
    }

    pub fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, attention_too: bool, rng: &mut R) -> Self {
        Self {
            actor: self.actor.perturbed(sigma, rng),
            attention: if attention_too {
                self.attention.perturbed(sigma, rng)
            } else {
                self.attention.clone()
            },
        }
    }

    /// `h_s(s)` for a batch of normalised states.
    pub fn mask(&self, states: &Tensor) -> Result<Tensor> {
        self.attention.infer(states, None)
    }

    pub fn act_batch(&self, states: &Tensor) -> Result<Tensor> {
        let mask = self.mask(states)?;
        self.actor.infer(states, Some(&mask))
    }
}

/// Attention plus actor of the observation module, clean or perturbed.
#[derive(Clone, Debug)]
pub struct ObsPolicy {
    pub actor: Graph,
    pub attention: Option<Graph>,
}

impl ObsPolicy {
    pub fn from_module(m: &ObsModule) -> Self {
        Self {
            actor: m.actor.clone(),
            attention: m.attention.clone(),
        }
    }

    pub fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, attention_too: bool, rng: &mut R) -> Self {
        Self {
            actor: self.actor.perturbed(sigma, rng),
            attention: match &self.attention {
                Some(h) if attention_too => Some(h.perturbed(sigma, rng)),
                other => other.clone(),
            },
        }
    }

    /// Tiled `h_o(o)`, or `None` for an ungated actor.
    pub fn mask(&self, obs: &Tensor) -> Result<Option<Tensor>> {
        self.attention.as_ref().map(|h| h.infer(obs, None)).transpose()
    }

    pub fn act_batch(&self, obs: &Tensor) -> Result<Tensor> {
        let mask = self.mask(obs)?;
        self.actor.infer(obs, mask.as_ref())
    }
}

fn to_action(t: &Tensor) -> [f64; 2] {
    [t.data()[0], t.data()[1]]
}

fn normalised_state(state: &[f64], normaliser: &RunningNormaliser) -> Result<Tensor> {
    Tensor::new(vec![1, state.len()], normaliser.normalise(state))
}

/// Action of the state actor for a raw state. `explore` substitutes a
/// perturbed copy for the online networks.
pub fn act_state(state: &[f64], nets: &NetworkSet, explore: Option<&StatePolicy>) -> Result<[f64; 2]> {
    let s = normalised_state(state, &nets.normaliser)?;
    let out = match (explore, &nets.state) {
        (Some(p), _) => p.act_batch(&s)?,
        (None, Some(m)) => StatePolicy::from_module(m).act_batch(&s)?,
        (None, None) => {
            return Err(crate::Error::Usage("network set has no state module".into()))
        }
    };
    Ok(to_action(&out))
}

/// Action of the observation actor for one frame.
pub fn act_obs(obs: &Observation, nets: &NetworkSet, explore: Option<&ObsPolicy>) -> Result<[f64; 2]> {
    let o = obs_batch(&[obs])?;
    let out = match explore {
        Some(p) => p.act_batch(&o)?,
        None => {
            let m = &nets.obs;
            let mask = m.attention.as_ref().map(|h| h.infer(&o, None)).transpose()?;
            m.actor.infer(&o, mask.as_ref())?
        }
    };
    Ok(to_action(&out))
}

/// Policy driving one rollout.
#[derive(Clone, Debug)]
pub enum BehaviourPolicy {
    State(StatePolicy),
    Obs(ObsPolicy),
    /// Uniform actions in `[-max_speed, max_speed]^2`.
    Random { max_speed: f64 },
}

impl BehaviourPolicy {
    pub fn act<R: Rng + ?Sized>(
        &self,
        frame: &Frame,
        normaliser: &RunningNormaliser,
        rng: &mut R,
    ) -> Result<[f64; 2]> {
        match self {
            Self::State(p) => Ok(to_action(
                &p.act_batch(&normalised_state(&frame.state, normaliser)?)?,
            )),
            Self::Obs(p) => Ok(to_action(&p.act_batch(&obs_batch(&[&frame.observation])?)?)),
            Self::Random { max_speed } => Ok([
                rng.random_range(-*max_speed..=*max_speed),
                rng.random_range(-*max_speed..=*max_speed),
            ]),
        }
    }
}

/// Measures the distance between clean and perturbed actions on the same
/// inputs (in units of the action bound) and adapts `sigma`. Returns the distance.
pub fn adapt_param_noise(
    noise: &mut ParamNoiseState,
    clean_actions: &Tensor,
    perturbed_actions: &Tensor,
    max_speed: f64,
) -> f64 {
    let d = action_distance(clean_actions.data(), perturbed_actions.data()) / max_speed;
    noise.adapt(d);
    d
}
