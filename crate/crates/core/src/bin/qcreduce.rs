use std::process::ExitCode;

fn main() -> ExitCode {
    qcreduce::cli::main_with_args(std::env::args_os())
}
