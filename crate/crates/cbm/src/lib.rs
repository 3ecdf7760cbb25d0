//! Reproducibility surface for `cbm-core`: versioned JSON file formats,
//! seeded experiment runners with summary statistics, and the `cbm` CLI.

#![forbid(unsafe_code)]

pub mod cli;
pub mod experiments;
pub mod formats;
pub mod stats;
