fn main() {
    std::process::exit(sadl::cli::run_from_args(std::env::args_os()));
}
