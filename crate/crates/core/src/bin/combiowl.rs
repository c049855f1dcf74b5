use clap::Parser;

use combiowl::cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = run(Cli::parse())?;
    std::process::exit(code);
}
