pub mod cenet;
pub mod cli;
pub mod error;
pub mod imaging;
pub mod layers;
pub mod prnet;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
