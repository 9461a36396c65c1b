pub mod contract;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod injection;
pub mod math;
pub mod metrics;
pub mod multirate;
pub mod scene;
pub mod scorer;
pub mod uncertainty;
pub mod vocab;

pub use error::{Error, Result};
