fn main() {
    std::process::exit(sphs::cli::run(std::env::args_os()));
}
