fn main() {
    std::process::exit(devae::cli::run(std::env::args_os()));
}
