use clap::Parser;

fn main() {
    let cli = retrofit::cli::Cli::parse();
    std::process::exit(retrofit::cli::run(cli));
}
