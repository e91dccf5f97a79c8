use std::process::ExitCode;

use clap::Parser;
use xaihealth_cli::commands::{run, Cli, Status};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Status::Config.into()
            } else {
                Status::Pass.into()
            };
        }
    };
    let mut out = String::new();
    let result = run(cli, &mut out);
    print!("{out}");
    match result {
        Ok(status) => status.into(),
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.status.into()
        }
    }
}
