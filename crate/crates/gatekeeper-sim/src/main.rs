use env_logger::Env;

fn main() {
    // GK_LOG_LEVEL in {error, info, debug}; stderr so data files and the
    // stdout tables stay clean.
    env_logger::Builder::from_env(Env::new().filter_or("GK_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    std::process::exit(gatekeeper_sim::cli::run_cli());
}
