use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hdmt_cli::run(std::env::args_os()))
}
