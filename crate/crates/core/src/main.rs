fn main() {
    std::process::exit(eclab::cli::run(std::env::args_os()));
}
