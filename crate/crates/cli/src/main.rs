mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    commands::init_thread_pool();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let envelope = serde_json::json!({
                "error": err.kind,
                "message": err.message,
            });
            eprintln!("{envelope}");
            ExitCode::from(err.exit_code)
        }
    }
}
