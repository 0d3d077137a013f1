//! Turbo-autoencoder channel codes: parallel and serial concatenations of learned
//! convolutional encoders with iterative learned decoders.

pub mod autograd;
pub mod blocks;
pub mod error;
pub mod evaluate;
pub mod models;
pub mod optim;
pub mod priors;
pub mod ste;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
