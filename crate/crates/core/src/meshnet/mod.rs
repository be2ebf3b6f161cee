//! Toy-scale mesh network blocks: spiral convolution, quadric-decimation
//! sampling, the pose/rest-mesh embedding network with its shared decoder,
//! per-vertex identity offsets and a momentum training loop.

mod identity;
mod layers;
mod sampling;
mod spiral;
mod tl;
mod train;

pub use identity::{identity_loss, identity_offsets, IdentityGrad, IdentityParams};
pub use layers::{spiral_conv, spiral_conv_backward, SpiralConvGrad, Tensor};
pub use sampling::{build_sampling, edge_collapse_cost, SamplingOperator};
pub use spiral::{build_spirals, SpiralIndices, PAD};
pub use tl::{
    skin_loss, skin_loss_grad, LatentCode, NetParams, PartOps, TlConfig, TlExample, TlLosses, TlModel, TlOutput,
    LATENT_DIM,
};
pub use train::{train_toy, TrainConfig, TrainOutcome};
