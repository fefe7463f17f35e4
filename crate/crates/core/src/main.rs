use clap::Parser;

fn main() {
    let cli = nvc::cli::Cli::parse();
    std::process::exit(nvc::cli::run(cli));
}
