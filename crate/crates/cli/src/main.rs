use clap::Parser;

fn main() {
    let cli = pacgen_cli::Cli::parse();
    if let Err(failure) = pacgen_cli::run(&cli) {
        eprintln!("pacgen: {failure}");
        std::process::exit(failure.exit_code());
    }
}
