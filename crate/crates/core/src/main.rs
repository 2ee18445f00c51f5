use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = drift_eigen::cli::Cli::parse();
    std::process::exit(drift_eigen::cli::run(cli));
}
