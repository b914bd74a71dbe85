use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cwe_analyzer::cli::run(std::env::args_os()) as u8)
}
