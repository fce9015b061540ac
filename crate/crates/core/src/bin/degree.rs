fn main() {
    std::process::exit(degree::cli::run(std::env::args_os()));
}
