use clap::Parser;
use loopchat_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(err) = run(cli, &mut stdout) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
