use clap::Parser;

fn main() {
    let cli = anglerig_cli::Cli::parse();
    std::process::exit(anglerig_cli::execute(cli));
}
