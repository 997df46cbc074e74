//! Small reverse-mode differentiation engine for sequential networks.
//!
//! A [`Graph`] is a static pipeline of [`LayerSpec`] stages over batched
//! [`Tensor`]s, with at most one stage reading a per-sample side input
//! (action concatenation for critics, mask gating for actors).

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use gradcheck::{check_graph, finite_diff_check, GradCheckReport};
pub use graph::{polyak_update, Gradients, Graph, Trace};
pub use layers::LayerSpec;
pub use tensor::{elementwise_multiply, tile_channels, untile_channels, Tensor};


