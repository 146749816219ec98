pub mod autodiff;
pub mod cli;
pub mod dup_service;
pub mod duptower;
pub mod encoder;
pub mod error;
pub mod ingest;
pub mod sod;
pub mod sodd;
pub mod tokenizer;
pub mod train_eval;

pub use error::{Error, Result};
