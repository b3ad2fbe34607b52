//! Generators and discriminators built from the cells, solver and spline
//! layers.
//!
//! Each model owns a [`ParamStore`]; a forward pass first binds the store to
//! a tape ([`ParamStore::bind`] for training, [`ParamStore::bind_frozen`] for
//! inference) and then reads its tensors through the returned [`Bound`].

mod checkpoint;
mod discriminators;
mod generators;
mod layers;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use discriminators::{
    CdeDiscConfig, CdeDiscriminator, ConvDiscConfig, ConvDiscriminator, ConvNodeConfig,
    ConvNodeDiscriminator, Discriminator,
};
pub use generators::{
    sample_y0, time_grid, BaselineConfig, BaselineLstmGenerator, Generator, OdeEcgConfig,
    OdeEcgGenerator, OdeGenerator, OdeGeneratorConfig,
};
pub use layers::{Conv, GruIds, Linear, LstmIds, LstmLayer};
pub use params::{Bound, ParamId, ParamStore};
