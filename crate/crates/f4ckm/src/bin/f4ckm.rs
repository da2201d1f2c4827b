fn main() {
    std::process::exit(f4ckm::cli::run(std::env::args_os()));
}
