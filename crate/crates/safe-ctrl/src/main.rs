use std::process::ExitCode;

fn main() -> ExitCode {
    safe_ctrl::cli::main_from(std::env::args_os())
}
