pub mod bitstream;
pub mod blocks;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod hpcm;
pub mod lattice;
pub mod oracle;
pub mod pipeline;
pub mod selftest;
pub mod temporal;
pub mod tensor;
pub mod transforms;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
