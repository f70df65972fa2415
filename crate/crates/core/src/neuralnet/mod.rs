//! Minimal deep-learning stack: 4-D tensors, a tape autodiff graph, the
//! U-Net generator, PatchGAN discriminator, frozen feature network, losses,
//! Adam and binary checkpoints.

mod adam;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod graph;
pub mod loss;
mod models;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use graph::{Bound, Graph, Var};
pub use models::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamSet, PerceptualNet,
    PERCEPTUAL_SEED, PERCEPTUAL_WIDTHS,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
