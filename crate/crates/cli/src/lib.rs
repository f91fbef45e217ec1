//! Library surface of the command-line pipeline, kept separate from the
//! binary so integration tests can drive commands in-process.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_evaluate, cmd_synth, cmd_threshold, cmd_train_ae, cmd_train_snet, CmdError,
};
pub use config::{load_config, RunConfig};
