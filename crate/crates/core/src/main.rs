fn main() {
    std::process::exit(psa::cli::run(std::env::args_os()));
}
