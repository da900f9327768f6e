use std::process::ExitCode;

fn main() -> ExitCode {
    stormgrid::cli::run()
}
