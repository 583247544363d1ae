use clap::Parser;
use debris_server::cli::{run, Cli};

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("debris: {e}");
        std::process::exit(e.exit_code());
    }
}
