pub mod error;
pub mod funding;
pub mod ingest;
pub mod peg;
pub mod queue;
pub mod rail;
pub mod rundyn;
pub mod scenario;
pub mod timeseries;
mod util;

pub use error::{Error, Result};
