//! Generator and discriminator architectures plus the topology variants that
//! route excitation and conditioning between them.

mod discriminator;
mod generator;
mod model;
mod params;

pub use discriminator::{
    DiscriminatorBank, DiscriminatorConfig, DiscriminatorStack, SCALE_FACTORS,
};
pub use generator::{GeneratorConfig, GeneratorStack};
pub use model::{
    BoundModel, CondLeaves, ExcitationLeaves, ForwardOutput, PeriodNetModel, Profile, Variant,
};
pub use params::{Param, ParamId, ParamStore};
