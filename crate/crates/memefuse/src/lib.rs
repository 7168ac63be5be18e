//! File formats, image IO, run orchestration and the command line around `memefuse-core`.

pub mod cli;
pub mod config;
pub mod imageio;
pub mod manifest;
pub mod plot;
pub mod providers;
pub mod runs;
pub mod synth;
