use clap::Parser;

fn main() {
    let cli = pcrm_cli::Cli::parse();
    if let Err(e) = pcrm_cli::run(cli) {
        eprintln!("pcrm: {e}");
        std::process::exit(e.exit_code());
    }
}
