use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match burstsr_cli::run(burstsr_cli::Cli::parse()) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
