use clap::Parser;

fn main() {
    let cli = star422::cli::Cli::parse();
    if let Err(e) = star422::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
