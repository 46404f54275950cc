fn main() {
    std::process::exit(paray::cli::run(std::env::args_os()));
}
