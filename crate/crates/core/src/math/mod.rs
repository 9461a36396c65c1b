//! Dense tensors, reverse-mode autodiff and shared numeric utilities.

pub mod embed;
pub mod gradcheck;
pub mod kmeans;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use embed::sinusoidal_embed;
pub use kmeans::{kmeans, KMeans};
pub use nn::{CrossAttention, Linear, Mlp};
pub use params::{cosine_lr, Adam, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{sigmoid, softmax, softplus, Tensor};
