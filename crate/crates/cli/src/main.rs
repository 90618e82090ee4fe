use clap::Parser;
use nlbp_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("cannot set worker count: {e}");
        }
    }
    if let Err(f) = run(cli) {
        log::error!("{f}");
        std::process::exit(f.exit_code());
    }
}
