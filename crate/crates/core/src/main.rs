use clap::Parser;

fn main() {
    let cli = adelic_energy::cli::Cli::parse();
    std::process::exit(adelic_energy::cli::run(cli));
}
