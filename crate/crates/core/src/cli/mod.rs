//! Run configuration and the command implementations behind the
//! `attn-align` binary.

mod commands;
mod config;

pub use commands::{cmd_eval, cmd_grid, cmd_saliency, cmd_synth, cmd_train, load_split, load_teachers};
pub use config::{parse_config, parse_config_str, MnistPaths, RunConfig, KEYS};
