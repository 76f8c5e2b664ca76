use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("GROUNDLENS_LOG", "error"),
    )
    .init();
    let cli = groundlens::args::Cli::parse();
    match groundlens::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(groundlens::exit_code_for(&e))
        }
    }
}
