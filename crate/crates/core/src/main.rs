fn main() {
    std::process::exit(safeseg::cli::run(std::env::args_os()));
}
