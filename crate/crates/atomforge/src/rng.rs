//! Deterministic random-number plumbing.
//!
//! Every stochastic routine takes (seed, stream) rather than a shared RNG, so
//! results never depend on iteration order or thread count. Parallel loops
//! hand stream `base + index` to worker `index` and aggregate in index order.

use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};

/// Stream-id bases, spaced far enough apart that per-trial offsets from
/// different subsystems can never collide.
pub mod streams {
    pub const MONTECARLO: u64 = 0x0100_0000;
    pub const IMAGING: u64 = 0x0200_0000;
    pub const SPECTROSCOPY: u64 = 0x0300_0000;
    pub const PIPELINE: u64 = 0x0400_0000;
    pub const AUTOFOCUS: u64 = 0x0500_0000;
    pub const LIFETIME: u64 = 0x0600_0000;
    pub const PLANNER: u64 = 0x0700_0000;
}

/// Independent generator for (seed, stream). Same pair, same sequence,
/// on every platform and thread layout.
pub fn make_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed precedence: CLI flag beats the ATOMFORGE_SEED environment variable,
/// which beats the config file value.
pub fn resolve_seed(cli_seed: Option<u64>, config: &Config) -> Result<u64> {
    if let Some(s) = cli_seed {
        return Ok(s);
    }
    match std::env::var("ATOMFORGE_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("ATOMFORGE_SEED must be a u64, got {v:?}"))),
        Err(_) => Ok(config.mc.seed),
    }
}
