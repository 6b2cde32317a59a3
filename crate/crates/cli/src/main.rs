use clap::Parser;

fn main() {
    let cli = lrcs_cli::Cli::parse();
    if let Err(e) = lrcs_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
