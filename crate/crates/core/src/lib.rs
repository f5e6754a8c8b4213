pub mod analysis;
pub mod cli;
pub mod error;
pub mod guard;
pub mod injector;
pub mod model;
pub mod numerics;
pub mod profiler;

pub use error::{Error, Result};
