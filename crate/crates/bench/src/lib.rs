//! Shared setup for the benchmarks.

use rift_core::campaign::{prepare, Prepared};
use rift_core::CampaignConfig;

/// The default DUT, profile and candidates.
pub fn default_setup() -> (CampaignConfig, Prepared) {
    let cfg = CampaignConfig { oracle: false, ..CampaignConfig::default() };
    let prep = prepare(&cfg).expect("default DUT builds");
    (cfg, prep)
}
