pub mod ed;
pub mod error;
pub mod itebd;
pub mod linalg;
pub mod mps;
pub mod parent;
pub mod spt;
pub mod strategy;
pub mod sweep;
pub mod symmetry;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{contract, Tensor, C64};
