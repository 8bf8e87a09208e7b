fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(causal_kt::cli::run(std::env::args_os()));
}
