fn main() {
    std::process::exit(sgraf::cli::run(std::env::args_os()));
}
