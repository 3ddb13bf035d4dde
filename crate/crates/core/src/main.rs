fn main() {
    std::process::exit(fsat::cli::run_from(std::env::args_os()));
}
