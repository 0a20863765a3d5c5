use std::process::ExitCode;

fn main() -> ExitCode {
    driftguard::cli::main()
}
