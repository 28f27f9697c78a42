fn main() {
    std::process::exit(singular_shooting::cli::run(std::env::args_os()));
}
