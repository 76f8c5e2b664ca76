//! CLI plumbing for the grounding pipeline: argument parsing, configuration
//! resolution and the subcommand implementations. The binary in `main.rs` is
//! a thin wrapper so tests can drive everything in-process.

pub mod args;
pub mod commands;
pub mod config;

use groundlens_core::error::Error;

/// Dispatches a parsed command line.
pub fn run(cli: args::Cli) -> groundlens_core::error::Result<()> {
    match cli.command {
        args::Command::Ground(a) => commands::cmd_ground(&a),
        args::Command::Evaluate(a) => commands::cmd_evaluate(&a),
        args::Command::Ablate(a) => commands::cmd_ablate(&a),
        args::Command::Inspect(a) => commands::cmd_inspect(&a),
        args::Command::SynthDemo(a) => commands::cmd_synth_demo(&a),
    }
}

/// Exit-code contract: 2 for input/validation problems, 1 for runtime
/// failures (0 on success).
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Validation(_)
        | Error::InvalidArgument(_)
        | Error::CorruptVocabulary(_)
        | Error::InvalidGroundTruth(_)
        | Error::EmptySelection(_) => 2,
        Error::ShapeMismatch(_)
        | Error::NonFinite(_)
        | Error::ModelCorruption(_)
        | Error::UndefinedMetric(_) => 1,
    }
}
