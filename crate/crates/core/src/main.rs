fn main() {
    std::process::exit(mgcp::cli::run(std::env::args_os()));
}
