pub mod corpus;
pub mod dnc;
pub mod error;
pub mod featurize;
pub mod gbdt;
pub mod pipeline;
pub mod seq2seq;
pub mod tensor;

pub use error::{Error, Result};
