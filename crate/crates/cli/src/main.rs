use clap::Parser;

fn main() {
    let cli = bcilm_cli::Cli::parse();
    if let Err(e) = bcilm_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
