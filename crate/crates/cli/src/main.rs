use clap::Parser;

fn main() {
    let cli = weightcell_cli::Cli::parse();
    if let Err(e) = weightcell_cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
