fn main() {
    std::process::exit(flat::cli::run(std::env::args_os()));
}
