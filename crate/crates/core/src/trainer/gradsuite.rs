//! Central finite-difference checks of every training loss on miniature networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::{critic_loss, obs_losses, state_attention_loss, AlignmentBatch};
use crate::agents::{ArchConfig, ConvSpec, CriticInput, EnvDims, ModuleLayout, NetworkSet};
use crate::alignment::{attention_target, object_attention, pixel_weights};
use crate::autodiff::{finite_diff_check, GradCheckReport, Tensor};
use crate::env::{adjacency_matrix, SegmentationMaps};
use crate::error::Result;

/// Outcome of one loss's check.
#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn tiny_arch() -> ArchConfig {
    let conv = |channels, kernel| ConvSpec { channels, kernel, stride: 1 };
    ArchConfig {
        state_actor: vec![5],
        obs_actor_conv: vec![conv(2, 3)],
        obs_actor_fc: vec![4],
        critic: vec![5, 4],
        state_attention: vec![5],
        obs_attention_conv: vec![conv(2, 2)],
        layer_norm: true,
        actor_output_init: 0.3,
    }
}

const DIMS: EnvDims = EnvDims {
    state_dim: 4,
    resolution: 5,
    max_speed: 0.15,
};

fn tiny(critic: CriticInput, attention: bool, bottleneck: bool, seed: u64) -> Result<NetworkSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = ModuleLayout {
        state_module: true,
        obs_attention: attention,
        obs_critic: critic,
        state_bottleneck: bottleneck,
    };
    NetworkSet::build(DIMS, &tiny_arch(), layout, &mut rng)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Two disjoint objects on a 5x5 frame; `shift` moves the first one.
fn maps(shift: usize) -> SegmentationMaps {
    let mut z = SegmentationMaps::empty(5, 2);
    for p in [0, 1, 5, 6] {
        z.set(0, p + shift, true);
    }
    z.set(1, 18, true);
    z.set(1, 24, true);
    z
}

fn alignment_batch(n: &NetworkSet, s: &Tensor) -> Result<AlignmentBatch> {
    let m = n.state.as_ref().expect("state module");
    let h = m.attention.infer(s, None)?;
    let adj = adjacency_matrix(2);
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for b in 0..s.batch() {
        let z = maps(b % 3);
        targets.push(attention_target(&object_attention(&adj, h.sample(b))?, &z)?);
        weights.push(pixel_weights(&z)?);
    }
    Ok(AlignmentBatch { targets, weights })
}

fn critic_check(input: CriticInput, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let n = tiny(input, false, false, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = match input {
        CriticInput::State => uniform(&[5, 4], -1.0, 1.0, &mut rng),
        CriticInput::Image => uniform(&[5, 3, 5, 5], 0.0, 1.0, &mut rng),
    };
    let a = uniform(&[5, 2], -0.15, 0.15, &mut rng);
    let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let critic = &n.obs.critic;
    let lg = critic_loss(critic, &x, &a, &y)?;
    let mut params = critic.params().to_vec();
    finite_diff_check(
        &mut params,
        &lg.grads,
        |p| {
            let mut g = critic.clone();
            g.set_params(p.to_vec())?;
            Ok(critic_loss(&g, &x, &a, &y)?.loss)
        },
        tol,
    )
}

fn state_attention_check(tol: f64) -> Result<GradCheckReport> {
    let n = tiny(CriticInput::State, true, false, 4)?;
    let m = n.state.as_ref().expect("state module");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = uniform(&[6, 4], -2.0, 2.0, &mut rng);
    // large enough for the entropy term to matter next to Q
    let beta = 0.3;
    let out = state_attention_loss(m, &s, beta)?;
    let n_actor = out.actor.len();
    let mut params: Vec<Tensor> = m.actor.params().iter().chain(m.attention.params()).cloned().collect();
    let analytic: Vec<Tensor> = out.actor.iter().chain(&out.attention).cloned().collect();
    finite_diff_check(
        &mut params,
        &analytic,
        |p| {
            let mut mm = m.clone();
            mm.actor.set_params(p[..n_actor].to_vec())?;
            mm.attention.set_params(p[n_actor..].to_vec())?;
            Ok(state_attention_loss(&mm, &s, beta)?.loss)
        },
        tol,
    )
}

fn obs_checks(tol: f64) -> Result<(GradCheckReport, GradCheckReport)> {
    let n = tiny(CriticInput::State, true, false, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = uniform(&[4, 4], -1.0, 1.0, &mut rng);
    let o = uniform(&[4, 3, 5, 5], 0.0, 1.0, &mut rng);
    let align = alignment_batch(&n, &s)?;
    let nu = 0.7;
    let out = obs_losses(&n.obs, &s, &o, Some(&align), nu, None)?;

    let mut actor_params = n.obs.actor.params().to_vec();
    let actor = finite_diff_check(
        &mut actor_params,
        &out.actor_grads,
        |p| {
            let mut m = n.obs.clone();
            m.actor.set_params(p.to_vec())?;
            Ok(obs_losses(&m, &s, &o, Some(&align), nu, None)?.actor)
        },
        tol,
    )?;
    let h = n.obs.attention.as_ref().expect("observation attention");
    let mut att_params = h.params().to_vec();
    let attention = finite_diff_check(
        &mut att_params,
        out.attention_grads.as_ref().expect("attention gradients"),
        |p| {
            let mut m = n.obs.clone();
            m.attention.as_mut().expect("attention").set_params(p.to_vec())?;
            Ok(obs_losses(&m, &s, &o, Some(&align), nu, None)?
                .attention
                .expect("attention loss"))
        },
        tol,
    )?;
    Ok((actor, attention))
}

fn s_map_check(tol: f64) -> Result<GradCheckReport> {
    let n = tiny(CriticInput::State, false, true, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = uniform(&[4, 4], -1.0, 1.0, &mut rng);
    let o = uniform(&[4, 3, 5, 5], 0.0, 1.0, &mut rng);
    let out = obs_losses(&n.obs, &s, &o, None, 1.0, Some(&s))?;
    let mut params = n.obs.actor.params().to_vec();
    finite_diff_check(
        &mut params,
        &out.actor_grads,
        |p| {
            let mut m = n.obs.clone();
            m.actor.set_params(p.to_vec())?;
            Ok(obs_losses(&m, &s, &o, None, 1.0, Some(&s))?.actor)
        },
        tol,
    )
}

/// Checks the Bellman critic losses (state and image critics), the state
/// actor/attention loss with its entropy penalty, the image actor loss, the
/// weighted alignment plus Q attention loss and the s-map regression loss.
pub fn loss_gradient_suite(tol: f64) -> Result<Vec<SuiteResult>> {
    let (obs_actor, obs_attention) = obs_checks(tol)?;
    Ok(vec![
        SuiteResult { name: "critic (state input)", report: critic_check(CriticInput::State, 2, tol)? },
        SuiteResult { name: "critic (image input)", report: critic_check(CriticInput::Image, 3, tol)? },
        SuiteResult { name: "state actor + attention (entropy)", report: state_attention_check(tol)? },
        SuiteResult { name: "image actor", report: obs_actor },
        SuiteResult { name: "image attention (alignment + Q)", report: obs_attention },
        SuiteResult { name: "s-map actor", report: s_map_check(tol)? },
    ])
}
