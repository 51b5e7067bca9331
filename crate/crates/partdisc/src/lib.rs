//! File formats, dataset orchestration and the command line around
//! `partdisc-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod inspect;
pub mod manifest;
pub mod npy;
pub mod settings;
pub mod simcache;
pub mod synthio;
pub mod train;

pub use error::{AppError, Result};
