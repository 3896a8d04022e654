fn main() {
    std::process::exit(steam::cli::run(std::env::args_os()));
}
