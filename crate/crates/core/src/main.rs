use clap::Parser;
use neckcare::cli::{self, Cli};

fn main() {
    let args = Cli::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = cli::run(&args, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
