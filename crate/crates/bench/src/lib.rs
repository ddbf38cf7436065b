//! Shared fixtures for the benchmarks.

use stgcl::config::RunConfig;
use stgcl::data::{synth_dataset, Dataset, SynthConfig};

/// Synthetic city with `regions` regions and the default model settings.
pub fn fixture(regions: usize) -> (Dataset, RunConfig) {
    let cfg = RunConfig {
        synth: SynthConfig {
            n_regions: regions,
            n_trips: regions * 50,
            ..SynthConfig::default()
        },
        ..RunConfig::default()
    };
    let ds = synth_dataset(&cfg.synth_config()).expect("valid synthetic config");
    (ds, cfg)
}
