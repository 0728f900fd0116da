//! File formats, the process-based test executor and the `prunekit`
//! command line on top of `prunekit-core`.

pub mod cli;
mod error;
pub mod executor;
pub mod files;
pub mod fixtures;
pub mod pfc;

pub use error::{Error, Result};
pub use executor::ProcessExecutor;
pub use pfc::{load_checkpoint, save_checkpoint};

/// Wall-clock milliseconds since the clock was created.
pub struct SystemClock(std::time::Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(std::time::Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl prunekit_core::pruner::Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}
