use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamNoiseState, RunningNormaliser};
use crate::autodiff::{Checkpoint, Graph, LayerSpec};
use crate::error::{Error, Result};

/// `[channels, square kernel size, stride]` of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn conv(channels: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        channels,
        kernel,
        stride,
    }
}

/// Hidden-layer sizes of every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub state_actor: Vec<usize>,
    pub obs_actor_conv: Vec<ConvSpec>,
    pub obs_actor_fc: Vec<usize>,
    pub critic: Vec<usize>,
    pub state_attention: Vec<usize>,
    /// Same-padded convolutions (stride ignored) before the 1x1 sigmoid head.
    pub obs_attention_conv: Vec<ConvSpec>,
    pub layer_norm: bool,
    /// Uniform init range of the actors' output layers.
    pub actor_output_init: f64,
}

impl ArchConfig {
    /// The NavWorld architecture: state actor FC[256]; image actor
    /// Conv[[18,7,1],[32,5,1],[32,3,1]] + FC[256]; critics FC[64,64];
    /// state attention FC[256] + softmax; image attention
    /// Conv[[32,8,1],[32,5,1],[64,3,1]] + 1x1 conv + sigmoid.
    pub fn navworld() -> Self {
        Self {
            state_actor: vec![256],
            obs_actor_conv: vec![conv(18, 7, 1), conv(32, 5, 1), conv(32, 3, 1)],
            obs_actor_fc: vec![256],
            critic: vec![64, 64],
            state_attention: vec![256],
            obs_attention_conv: vec![conv(32, 8, 1), conv(32, 5, 1), conv(64, 3, 1)],
            layer_norm: true,
            actor_output_init: 3e-3,
        }
    }

    /// Narrower image networks with the same layer structure, sized for
    /// single-core training at 24x24.
    pub fn desk() -> Self {
        Self {
            state_actor: vec![256],
            obs_actor_conv: vec![conv(8, 5, 1), conv(16, 3, 2), conv(16, 3, 1)],
            obs_actor_fc: vec![64],
            critic: vec![64, 64],
            state_attention: vec![256],
            obs_attention_conv: vec![conv(8, 5, 1), conv(8, 3, 1), conv(8, 3, 1)],
            layer_norm: true,
            actor_output_init: 3e-3,
        }
    }

    fn hidden(&self, layers: &mut Vec<LayerSpec>) {
        if self.layer_norm {
            layers.push(LayerSpec::LayerNorm);
        }
        layers.push(LayerSpec::Relu);
    }

    fn conv_valid_stack(&self, layers: &mut Vec<LayerSpec>) {
        for c in &self.obs_actor_conv {
            layers.push(LayerSpec::ConvValid {
                channels: c.channels,
                kernel: c.kernel,
                stride: c.stride,
            });
            self.hidden(layers);
        }
    }

    fn dense_stack(&self, units: &[usize], layers: &mut Vec<LayerSpec>) {
        for &u in units {
            layers.push(LayerSpec::Dense { units: u });
            self.hidden(layers);
        }
    }
}

/// Sizes the networks are built for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvDims {
    pub state_dim: usize,
    pub resolution: usize,
    pub max_speed: f64,
}

impl EnvDims {
    pub const ACTION_DIM: usize = 2;
    pub const CHANNELS: usize = 3;

    pub fn image_shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.resolution, self.resolution]
    }

    pub fn pixels(&self) -> usize {
        self.resolution * self.resolution
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticInput {
    /// Privileged state (asymmetric critic).
    State,
    /// Rendered frame (symmetric image baseline).
    Image,
}

/// Which networks exist for a training variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleLayout {
    pub state_module: bool,
    pub obs_attention: bool,
    pub obs_critic: CriticInput,
    /// Image actor carries a state-sized regression layer after its convolutions.
    pub state_bottleneck: bool,
}

pub fn build_state_attention<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<Graph> {
    let mut layers = Vec::new();
    arch.dense_stack(&arch.state_attention, &mut layers);
    layers.push(LayerSpec::Dense {
        units: dims.state_dim,
    });
    layers.push(LayerSpec::Softmax);
    Graph::new(&[dims.state_dim], None, &layers, rng)
}

/// State actor; the side input is the attention mask multiplied into the state.
pub fn build_state_actor<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<Graph> {
    let mut layers = vec![LayerSpec::ElementwiseMultiply];
    arch.dense_stack(&arch.state_actor, &mut layers);
    push_action_head(dims, &mut layers);
    let mut g = Graph::new(&[dims.state_dim], Some(&[dims.state_dim]), &layers, rng)?;
    g.init_output_layer(arch.actor_output_init, rng);
    Ok(g)
}

/// State-input critic; the action joins at the first dense layer.
pub fn build_critic<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<Graph> {
    let mut layers = vec![LayerSpec::ConcatSide];
    arch.dense_stack(&arch.critic, &mut layers);
    layers.push(LayerSpec::Dense { units: 1 });
    Graph::new(
        &[dims.state_dim],
        Some(&[EnvDims::ACTION_DIM]),
        &layers,
        rng,
    )
}

/// Per-pixel attention, output `[3,H,W]` (one sigmoid plane tiled over RGB).
pub fn build_obs_attention<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<Graph> {
    let mut layers = Vec::new();
    for c in &arch.obs_attention_conv {
        layers.push(LayerSpec::ConvSame {
            channels: c.channels,
            kernel: c.kernel,
        });
        arch.hidden(&mut layers);
    }
    layers.push(LayerSpec::ConvSame {
        channels: 1,
        kernel: 1,
    });
    layers.push(LayerSpec::Sigmoid);
    layers.push(LayerSpec::TileChannels {
        channels: EnvDims::CHANNELS,
    });
    Graph::new(&dims.image_shape(), None, &layers, rng)
}

/// Image actor. With `gated`, the side input is the tiled attention mask.
/// With `bottleneck`, a dense layer of width `state_dim` follows the
/// convolutions; its index is returned.
pub fn build_obs_actor<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    gated: bool,
    bottleneck: bool,
    rng: &mut R,
) -> Result<(Graph, Option<usize>)> {
    let mut layers = Vec::new();
    if gated {
        layers.push(LayerSpec::ElementwiseMultiply);
    }
    arch.conv_valid_stack(&mut layers);
    let bottleneck_layer = bottleneck.then(|| {
        layers.push(LayerSpec::Dense {
            units: dims.state_dim,
        });
        layers.len() - 1
    });
    arch.dense_stack(&arch.obs_actor_fc, &mut layers);
    push_action_head(dims, &mut layers);
    let shape = dims.image_shape();
    let mut g = Graph::new(&shape, gated.then_some(&shape[..]), &layers, rng)?;
    g.init_output_layer(arch.actor_output_init, rng);
    Ok((g, bottleneck_layer))
}

/// Image critic with the actor's convolutional trunk.
pub fn build_image_critic<R: Rng + ?Sized>(
    dims: &EnvDims,
    arch: &ArchConfig,
    rng: &mut R,
) -> Result<Graph> {
    let mut layers = Vec::new();
    arch.conv_valid_stack(&mut layers);
    layers.push(LayerSpec::ConcatSide);
    arch.dense_stack(&arch.obs_actor_fc, &mut layers);
    layers.push(LayerSpec::Dense { units: 1 });
    Graph::new(
        &dims.image_shape(),
        Some(&[EnvDims::ACTION_DIM]),
        &layers,
        rng,
    )
}

fn push_action_head(dims: &EnvDims, layers: &mut Vec<LayerSpec>) {
    layers.push(LayerSpec::Dense {
        units: EnvDims::ACTION_DIM,
    });
    layers.push(LayerSpec::Tanh);
    layers.push(LayerSpec::Scale {
        factor: dims.max_speed,
    });
}

/// Symmetric state-based actor-critic with input attention.
#[derive(Clone, Debug)]
pub struct StateModule {
    pub critic: Graph,
    pub actor: Graph,
    pub attention: Graph,
    pub target_critic: Graph,
    pub target_actor: Graph,
}

/// Image-based actor with a state (or image) critic.
#[derive(Clone, Debug)]
pub struct ObsModule {
    pub critic: Graph,
    pub actor: Graph,
    pub attention: Option<Graph>,
    pub target_critic: Graph,
    pub target_actor: Graph,
    pub critic_input: CriticInput,
    /// Index of the state-regression layer in `actor`, if any.
    pub bottleneck: Option<usize>,
}

/// Every network of one run plus normaliser and exploration state.
#[derive(Clone, Debug)]
pub struct NetworkSet {
    pub dims: EnvDims,
    pub layout: ModuleLayout,
    pub state: Option<StateModule>,
    pub obs: ObsModule,
    pub normaliser: RunningNormaliser,
    pub state_noise: ParamNoiseState,
    pub obs_noise: ParamNoiseState,
}

impl NetworkSet {
    pub fn build<R: Rng + ?Sized>(
        dims: EnvDims,
        arch: &ArchConfig,
        layout: ModuleLayout,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.state_dim == 0 || dims.resolution == 0 || dims.max_speed <= 0.0 {
            return Err(Error::Config(format!("invalid environment dimensions {dims:?}")));
        }
        let state = if layout.state_module {
            let critic = build_critic(&dims, arch, rng)?;
            let actor = build_state_actor(&dims, arch, rng)?;
            let attention = build_state_attention(&dims, arch, rng)?;
            Some(StateModule {
                target_critic: critic.clone(),
                target_actor: actor.clone(),
                critic,
                actor,
                attention,
            })
        } else {
            None
        };
        let critic = match layout.obs_critic {
            CriticInput::State => build_critic(&dims, arch, rng)?,
            CriticInput::Image => build_image_critic(&dims, arch, rng)?,
        };
        let (actor, bottleneck) =
            build_obs_actor(&dims, arch, layout.obs_attention, layout.state_bottleneck, rng)?;
        let attention = if layout.obs_attention {
            Some(build_obs_attention(&dims, arch, rng)?)
        } else {
            None
        };
        Ok(Self {
            dims,
            layout,
            state,
            obs: ObsModule {
                target_critic: critic.clone(),
                target_actor: actor.clone(),
                critic,
                actor,
                attention,
                critic_input: layout.obs_critic,
                bottleneck,
            },
            normaliser: RunningNormaliser::new(dims.state_dim),
            state_noise: ParamNoiseState::default(),
            obs_noise: ParamNoiseState::default(),
        })
    }

    fn graphs(&self) -> Vec<(&'static str, &Graph)> {
        let mut out = Vec::new();
        if let Some(s) = &self.state {
            out.extend([
                ("q_s", &s.critic),
                ("pi_s", &s.actor),
                ("h_s", &s.attention),
                ("q_s_target", &s.target_critic),
                ("pi_s_target", &s.target_actor),
            ]);
        }
        out.extend([
            ("q_o", &self.obs.critic),
            ("pi_o", &self.obs.actor),
            ("q_o_target", &self.obs.target_critic),
            ("pi_o_target", &self.obs.target_actor),
        ]);
        if let Some(h) = &self.obs.attention {
            out.push(("h_o", h));
        }
        out
    }

    fn graphs_mut(&mut self) -> Vec<(&'static str, &mut Graph)> {
        let mut out = Vec::new();
        if let Some(s) = &mut self.state {
            out.extend([
                ("q_s", &mut s.critic),
                ("pi_s", &mut s.actor),
                ("h_s", &mut s.attention),
                ("q_s_target", &mut s.target_critic),
                ("pi_s_target", &mut s.target_actor),
            ]);
        }
        let obs = &mut self.obs;
        out.extend([
            ("q_o", &mut obs.critic),
            ("pi_o", &mut obs.actor),
            ("q_o_target", &mut obs.target_critic),
            ("pi_o_target", &mut obs.target_actor),
        ]);
        if let Some(h) = &mut obs.attention {
            out.push(("h_o", h));
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (name, g) in self.graphs() {
            ckpt.push_all(name, &g.param_names(), g.params());
        }
        self.normaliser.save(&mut ckpt, "normaliser");
        for (name, n) in [("state_noise", &self.state_noise), ("obs_noise", &self.obs_noise)] {
            ckpt.push(format!("{name}/sigma"), crate::autodiff::Tensor::scalar(n.sigma));
        }
        ckpt
    }

    /// Restores parameters into a set built with the same dims, arch and layout.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, g) in self.graphs_mut() {
            let params = ckpt.take_all(name, &g.param_names())?;
            g.set_params(params)
                .map_err(|_| Error::Format(format!("checkpoint network {name} has wrong shapes")))?;
        }
        let normaliser = RunningNormaliser::load(ckpt, "normaliser")?;
        if normaliser.dim() != self.dims.state_dim {
            return Err(Error::Format("checkpoint normaliser dimension mismatch".into()));
        }
        self.normaliser = normaliser;
        self.state_noise.sigma = ckpt.require("state_noise/sigma")?.data()[0];
        self.obs_noise.sigma = ckpt.require("obs_noise/sigma")?.data()[0];
        Ok(())
    }
}
