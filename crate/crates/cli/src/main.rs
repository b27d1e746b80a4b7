use clap::Parser;

use trajlift_cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAJLIFT_LOG", "warn")).init();
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(e.exit_code());
    }
}
