//! Experiment driver for windowed nearest neighbour digit classification.
//!
//! The `wnn` binary wraps these modules: [`config`] merges defaults, a TOML
//! file, the environment and flags; [`data`] loads and re-splits datasets;
//! [`commands`] implements the verbs; [`checkpoint`] and [`manifest`] make
//! long runs resumable and auditable.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;
