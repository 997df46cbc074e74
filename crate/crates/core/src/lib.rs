//! Attention-privileged actor-critic training on NavWorld.
//!
//! Two DDPG-style agents learn side by side from a shared replay buffer: a
//! state-based agent that sees the simulator state and an image-based agent
//! that sees rendered frames. Both gate their inputs with an attention mask;
//! the state agent's mask is projected into pixel space through segmentation
//! maps and used as a supervised target for the image agent's mask.

pub mod agents;
pub mod alignment;
pub mod autodiff;
pub mod env;
pub mod error;
pub mod eval;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};
