use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AEF_LOG", "warn")).init();
    let cli = aef_cli::Cli::parse();
    match aef_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(aef_cli::exit_code(&e))
        }
    }
}
