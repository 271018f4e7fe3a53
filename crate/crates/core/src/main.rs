fn main() {
    env_logger::init();
    std::process::exit(mdcyclegan::cli::run_command(std::env::args_os()));
}
