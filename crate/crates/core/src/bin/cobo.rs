fn main() {
    std::process::exit(cobo_core::harness::cli::run_cli(std::env::args_os()));
}
