pub mod autodiff;
pub mod backbone;
pub mod capsules;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dwt;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod multiscale;
pub mod params;
pub mod pipeline;
pub mod profile;
pub mod render;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use capsules::CapsuleSet;
pub use error::{DataError, Error, Result};
pub use tensor::Tensor;
