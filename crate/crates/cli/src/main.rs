use clap::Parser;
use idforge_cli::error::exit_code;
use idforge_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = idforge_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
