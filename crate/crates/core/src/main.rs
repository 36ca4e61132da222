use std::process::ExitCode;

use cluster_adapt::driver::{self, DriverError};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", driver::usage());
        return ExitCode::SUCCESS;
    }
    match driver::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, DriverError::Usage(_)) {
                eprintln!("run with --help for usage");
            }
            ExitCode::from(err.exit_code())
        }
    }
}
