//! Image-text matching by similarity graph reasoning and attention filtration.

pub mod autodiff;
pub mod cli;
pub mod batchnorm;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inspect;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod saf;
pub mod sgr;
pub mod simrep;
pub mod tensor;
pub mod train;

pub use autodiff::{Axis, Tape, Var};
pub use config::RunConfig;
pub use error::Error;
pub use model::Model;
pub use tensor::{Tensor, TensorError};
