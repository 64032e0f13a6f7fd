pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod optim;
pub mod oracle_eval;
pub mod ranker;
pub mod rng;
pub mod rollout;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
