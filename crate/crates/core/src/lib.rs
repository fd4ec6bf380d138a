pub mod analysis;
pub mod data;
pub mod error;
pub mod kv;
pub mod projection;
pub mod tensor;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
