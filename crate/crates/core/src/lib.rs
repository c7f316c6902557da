pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod linear;
pub mod net;
pub mod objective;
pub mod optim;
pub mod replication;
pub mod training;

pub use error::{Error, Result};
