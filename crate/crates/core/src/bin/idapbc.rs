fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IDAPBC_LOG", "warn")).init();
    std::process::exit(idapbc::cli::run_cli(std::env::args_os()));
}
