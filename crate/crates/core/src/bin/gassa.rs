use clap::Parser;
use gassa::cli::{error_line, exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            std::process::exit(exit_code(&e));
        }
    }
}
