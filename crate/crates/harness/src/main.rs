use std::process::ExitCode;

fn main() -> ExitCode {
    vscreen_harness::cli::run(std::env::args_os())
}
