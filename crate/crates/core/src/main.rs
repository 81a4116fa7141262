fn main() {
    std::process::exit(philokit::cli::run(std::env::args_os()));
}
