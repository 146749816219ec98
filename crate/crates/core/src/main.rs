fn main() {
    std::process::exit(dupforge::cli::run(std::env::args_os()));
}
