fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = bast_cli::run(std::env::args_os());
    std::process::exit(code);
}
