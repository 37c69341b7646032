use clap::Parser;

fn main() {
    let cli = colorenh::cli::Cli::parse();
    if let Err(e) = colorenh::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
