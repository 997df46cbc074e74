use std::sync::Arc;

use crate::agents::{obs_batch, CriticInput, ObsModule, RunningNormaliser, StateModule};
use crate::alignment::{alignment_mse, alignment_mse_grad, AttentionTarget, PixelWeights};
use crate::autodiff::{Gradients, Graph, Tensor};
use crate::env::SegmentationMaps;
use crate::error::{Error, Result};
use crate::replay::Transition;

/// Log floor inside the entropy, so saturated softmax entries stay finite.
const ENTROPY_FLOOR: f64 = 1e-12;

/// One minibatch in network-ready form.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Normalised states `[B, n_s]`.
    pub states: Tensor,
    pub next_states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// `[B, 3, H, W]`, present when built with images.
    pub obs: Option<Tensor>,
    pub next_obs: Option<Tensor>,
    pub segmentation: Vec<SegmentationMaps>,
}

impl Batch {
    pub fn new(ts: &[Arc<Transition>], normaliser: &RunningNormaliser, images: bool) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::Usage("empty minibatch".into()));
        }
        let n = ts.len();
        let dim = normaliser.dim();
        let states = |f: fn(&Transition) -> &[f64]| -> Result<Tensor> {
            let mut data = Vec::with_capacity(n * dim);
            for t in ts {
                data.extend(normaliser.normalise(f(t)));
            }
            Tensor::new(vec![n, dim], data)
        };
        let (obs, next_obs, segmentation) = if images {
            (
                Some(obs_batch(&ts.iter().map(|t| &t.obs).collect::<Vec<_>>())?),
                Some(obs_batch(&ts.iter().map(|t| &t.next_obs).collect::<Vec<_>>())?),
                ts.iter().map(|t| t.segmentation.clone()).collect(),
            )
        } else {
            (None, None, Vec::new())
        };
        Ok(Self {
            states: states(|t| &t.state)?,
            next_states: states(|t| &t.next_state)?,
            actions: Tensor::new(vec![n, 2], ts.iter().flat_map(|t| t.action).collect())?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
            obs,
            next_obs,
            segmentation,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn images(&self) -> Result<(&Tensor, &Tensor)> {
        match (&self.obs, &self.next_obs) {
            (Some(o), Some(o2)) => Ok((o, o2)),
            _ => Err(Error::Usage("minibatch was built without images".into())),
        }
    }
}

/// Scalar loss and one gradient per parameter of the optimised network.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// `y = r + gamma * (1 - done) * Q'`; without `terminal_mask` the done flag is ignored.
pub fn bellman_targets(
    rewards: &[f64],
    dones: &[bool],
    next_q: &Tensor,
    gamma: f64,
    terminal_mask: bool,
) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_q.data())
        .map(|((r, &d), q)| {
            if terminal_mask && d {
                *r
            } else {
                r + gamma * q
            }
        })
        .collect()
}

/// Mean squared Bellman error `mean (Q(x, a) - y)^2`.
pub fn critic_loss(critic: &Graph, input: &Tensor, actions: &Tensor, targets: &[f64]) -> Result<LossGrads> {
    let trace = critic.trace(input, Some(actions))?;
    let q = trace.output();
    let n = targets.len() as f64;
    let mut upstream = Tensor::zeros(q.shape());
    let mut loss = 0.0;
    for (i, (&qi, y)) in q.data().iter().zip(targets).enumerate() {
        let r = qi - y;
        loss += r * r / n;
        upstream.data_mut()[i] = 2.0 * r / n;
    }
    let grads = critic.backward_trace(&trace, &upstream)?;
    Ok(LossGrads {
        loss,
        grads: grads.params,
    })
}

/// Targets for the state critic from the target actor and critic; the online
/// attention gates the next state.
pub fn state_critic_targets(m: &StateModule, batch: &Batch, gamma: f64, terminal_mask: bool) -> Result<Vec<f64>> {
    let mask = m.attention.infer(&batch.next_states, None)?;
    let a2 = m.target_actor.infer(&batch.next_states, Some(&mask))?;
    let q2 = m.target_critic.infer(&batch.next_states, Some(&a2))?;
    Ok(bellman_targets(&batch.rewards, &batch.dones, &q2, gamma, terminal_mask))
}

/// Targets for the observation module's critic.
pub fn obs_critic_targets(m: &ObsModule, batch: &Batch, gamma: f64, terminal_mask: bool) -> Result<Vec<f64>> {
    let (_, o2) = batch.images()?;
    let mask = m.attention.as_ref().map(|h| h.infer(o2, None)).transpose()?;
    let a2 = m.target_actor.infer(o2, mask.as_ref())?;
    let next_input = match m.critic_input {
        CriticInput::State => &batch.next_states,
        CriticInput::Image => o2,
    };
    let q2 = m.target_critic.infer(next_input, Some(&a2))?;
    Ok(bellman_targets(&batch.rewards, &batch.dones, &q2, gamma, terminal_mask))
}

/// Critic input of the observation module for the current states.
pub fn obs_critic_input<'a>(m: &ObsModule, batch: &'a Batch) -> Result<&'a Tensor> {
    Ok(match m.critic_input {
        CriticInput::State => &batch.states,
        CriticInput::Image => batch.images()?.0,
    })
}

/// Shannon entropy (natural log) of a distribution.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.max(ENTROPY_FLOOR).ln()).sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct StateAttentionLoss {
    /// `-mean Q + beta * mean H`.
    pub loss: f64,
    pub q_mean: f64,
    pub entropy_mean: f64,
    pub actor: Vec<Tensor>,
    pub attention: Vec<Tensor>,
}

/// `L = -E[Q_s(s, pi_s(h_s(s) * s)) - beta H(h_s(s))]`, differentiated with
/// respect to both the state actor and the state attention.
pub fn state_attention_loss(m: &StateModule, states: &Tensor, beta: f64) -> Result<StateAttentionLoss> {
    let n = states.batch() as f64;
    let mask_trace = m.attention.trace(states, None)?;
    let mask = mask_trace.output();
    let actor_trace = m.actor.trace(states, Some(mask))?;
    let critic_trace = m.critic.trace(states, Some(actor_trace.output()))?;
    let q_mean = critic_trace.output().sum() / n;

    let dq = Tensor::filled(critic_trace.output().shape(), -1.0 / n);
    let da = side_grad(m.critic.backward_trace(&critic_trace, &dq)?)?;
    let actor = m.actor.backward_trace(&actor_trace, &da)?;
    let mut dmask = actor
        .side
        .ok_or_else(|| Error::Contract("state actor has no mask input".into()))?;

    let mut entropy_sum = 0.0;
    for b in 0..mask.batch() {
        let p = mask.sample(b);
        entropy_sum += entropy(p);
        let off = b * p.len();
        for (i, &v) in p.iter().enumerate() {
            // d/dp of -p ln p
            let dh = -(v.max(ENTROPY_FLOOR).ln() + 1.0);
            dmask.data_mut()[off + i] += beta * dh / n;
        }
    }
    let entropy_mean = entropy_sum / n;
    let attention = m.attention.backward_trace(&mask_trace, &dmask)?;
    Ok(StateAttentionLoss {
        loss: -q_mean + beta * entropy_mean,
        q_mean,
        entropy_mean,
        actor: actor.params,
        attention: attention.params,
    })
}

/// Alignment targets and pixel weights, one per batch element.
#[derive(Clone, Debug)]
pub struct AlignmentBatch {
    pub targets: Vec<AttentionTarget>,
    pub weights: Vec<PixelWeights>,
}

/// `mean ||b - s||^2 / n_s` between bottleneck activations and normalised
/// states, with its gradient with respect to the activations.
pub fn s_map_loss(bottleneck: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if bottleneck.shape() != targets.shape() {
        return Err(Error::Config(format!(
            "bottleneck {:?} vs state targets {:?}",
            bottleneck.shape(),
            targets.shape()
        )));
    }
    let n = bottleneck.len() as f64;
    let mut grad = Tensor::zeros(bottleneck.shape());
    let mut loss = 0.0;
    for (i, (b, s)) in bottleneck.data().iter().zip(targets.data()).enumerate() {
        let r = b - s;
        loss += r * r / n;
        grad.data_mut()[i] = 2.0 * r / n;
    }
    Ok((loss, grad))
}

/// Mean squared prediction error of each object's `[x, y]` block.
pub fn s_map_object_errors(bottleneck: &Tensor, targets: &Tensor) -> Vec<f64> {
    let dim = bottleneck.sample_len();
    let rows = bottleneck.batch() as f64;
    let mut out = vec![0.0; dim / 2];
    for b in 0..bottleneck.batch() {
        for (k, (p, s)) in bottleneck.sample(b).iter().zip(targets.sample(b)).enumerate() {
            out[k / 2] += (p - s).powi(2) / (2.0 * rows);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ObsLosses {
    /// `-mean Q_o(., pi_o(h_o(o) * o))`, plus the s-map term when present.
    pub actor: f64,
    pub q_mean: f64,
    /// `mean alignment - nu * mean Q`, when the actor has attention.
    pub attention: Option<f64>,
    pub alignment: Option<f64>,
    pub s_map: Option<f64>,
    pub actor_grads: Vec<Tensor>,
    pub attention_grads: Option<Vec<Tensor>>,
}

/// Actor and attention losses of the observation module from one shared
/// forward pass. The actor gradient does not reach the attention; the
/// attention receives the alignment term and `nu` times the Q term through
/// the actor's mask input.
pub fn obs_losses(
    m: &ObsModule,
    critic_input: &Tensor,
    obs: &Tensor,
    alignment: Option<&AlignmentBatch>,
    nu: f64,
    s_map_targets: Option<&Tensor>,
) -> Result<ObsLosses> {
    let n = obs.batch() as f64;
    let mask_trace = m.attention.as_ref().map(|h| h.trace(obs, None)).transpose()?;
    let actor_trace = m.actor.trace(obs, mask_trace.as_ref().map(|t| t.output()))?;
    let critic_trace = m.critic.trace(critic_input, Some(actor_trace.output()))?;
    let q_mean = critic_trace.output().sum() / n;
    let dq = Tensor::filled(critic_trace.output().shape(), -1.0 / n);
    let da = side_grad(m.critic.backward_trace(&critic_trace, &dq)?)?;

    let mut s_map = None;
    let actor = match (m.bottleneck, s_map_targets) {
        (Some(layer), Some(targets)) => {
            let (loss, grad) = s_map_loss(actor_trace.activation(layer), targets)?;
            s_map = Some(loss);
            m.actor.backward_trace_with(&actor_trace, &da, &[(layer, &grad)])?
        }
        (None, Some(_)) => return Err(Error::Usage("s-map targets given to an actor without bottleneck".into())),
        _ => m.actor.backward_trace(&actor_trace, &da)?,
    };

    let (mut attention, mut alignment_loss, mut attention_grads) = (None, None, None);
    if let (Some(h), Some(trace)) = (&m.attention, &mask_trace) {
        if s_map.is_some() {
            return Err(Error::Usage("s-map and observation attention are exclusive".into()));
        }
        let mut dmask = actor
            .side
            .clone()
            .ok_or_else(|| Error::Contract("gated actor has no mask input".into()))?;
        dmask.scale(nu);
        let mut loss = -nu * q_mean;
        if let Some(a) = alignment {
            let mask = trace.output();
            let plane = mask.sample_len() / mask.sample_shape()[0];
            if a.targets.len() != mask.batch() || a.weights.len() != mask.batch() {
                return Err(Error::Config("alignment batch size mismatch".into()));
            }
            let mut total = 0.0;
            for b in 0..mask.batch() {
                // channels are identical copies; the loss reads channel 0
                let h0 = &mask.sample(b)[..plane];
                total += alignment_mse(h0, &a.targets[b], &a.weights[b])?;
                let g = alignment_mse_grad(h0, &a.targets[b], &a.weights[b])?;
                let off = b * mask.sample_len();
                for (d, gi) in dmask.data_mut()[off..off + plane].iter_mut().zip(g) {
                    *d += gi / n;
                }
            }
            alignment_loss = Some(total / n);
            loss += total / n;
        }
        attention = Some(loss);
        attention_grads = Some(h.backward_trace(trace, &dmask)?.params);
    }
    Ok(ObsLosses {
        actor: -q_mean + s_map.unwrap_or(0.0),
        q_mean,
        attention,
        alignment: alignment_loss,
        s_map,
        actor_grads: actor.params,
        attention_grads,
    })
}

fn side_grad(g: Gradients) -> Result<Tensor> {
    g.side
        .ok_or_else(|| Error::Contract("critic has no action input".into()))
}
