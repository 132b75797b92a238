use clap::Parser;

fn main() {
    let cli = posekit_cli::Cli::parse();
    if let Err(e) = posekit_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
