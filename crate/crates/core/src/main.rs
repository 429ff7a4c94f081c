use clap::Parser;

fn main() {
    let args = breit_core::cli::Args::parse();
    std::process::exit(breit_core::cli::main_with(args));
}
