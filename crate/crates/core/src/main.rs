fn main() {
    std::process::exit(lidg::cli::run_from_env());
}
