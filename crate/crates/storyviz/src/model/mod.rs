//! Generator and discriminator models.

mod discriminator;
mod generator;

pub use discriminator::{
    count_parameters, DiscLosses, DiscriminatorStrategy, FusionOneWayDiscriminator, GenLosses,
    TwoWayBaselineDiscriminator,
};
pub use generator::{generate_batch, init_generator, initial_latents, GenOutputs};
