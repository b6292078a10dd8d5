use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(minsemi_cli::cli::run(std::env::args_os()))
}
