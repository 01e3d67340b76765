fn main() {
    std::process::exit(trisemi::cli::run(std::env::args_os()));
}
