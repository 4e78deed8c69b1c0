fn main() {
    std::process::exit(authorship_cli::run(std::env::args_os()));
}
