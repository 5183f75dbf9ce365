//! Synthetic data and slow reference implementations shared by the test
//! suites. Nothing here is used by the engine itself.

pub mod coarse_oracle;
pub mod corpus;
pub mod dsl_oracle;
pub mod fd;
pub mod gen;
pub mod hota_oracle;
pub mod kb_cases;
pub mod planted;
pub mod repair;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
