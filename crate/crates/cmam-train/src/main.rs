use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cmam_train::cli::run(std::env::args_os()) as u8)
}
