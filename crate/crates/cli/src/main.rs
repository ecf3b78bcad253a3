use clap::Parser;
use qmap_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = qmap_cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
