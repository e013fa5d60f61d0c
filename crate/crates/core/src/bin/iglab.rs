fn main() {
    std::process::exit(iglab::cli::run(std::env::args_os()));
}
