pub mod csv_io;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod evaluation;
pub mod impute;
pub mod models;
pub mod par;
pub mod rng;
pub mod schema;
pub mod synth;

pub use error::{Error, Result};
