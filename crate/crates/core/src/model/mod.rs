//! Two-stream encoder, attention decoder and patch critic.

mod config;
mod decoder;
mod discriminator;
mod encoder;
mod generator;

pub use config::{DiscriminatorConfig, GeneratorConfig, ModelConfig};
pub use decoder::Decoder;
pub use discriminator::{Discriminator, PatchScoreGrid};
pub use encoder::{Encoder, SpatioTemporalMap};
pub use generator::Generator;

use ndarray::{concatenate, s, Array4, Axis};

use crate::Scalar;

pub(crate) fn concat_channels<T: Scalar>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("matching spatial shapes")
}

pub(crate) fn split_channels<T: Scalar>(x: &Array4<T>, first: usize) -> (Array4<T>, Array4<T>) {
    (
        x.slice(s![.., ..first, .., ..]).to_owned(),
        x.slice(s![.., first.., .., ..]).to_owned(),
    )
}
