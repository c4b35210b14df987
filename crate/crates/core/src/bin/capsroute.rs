fn main() {
    std::process::exit(capsroute::cli::run(std::env::args_os()));
}
