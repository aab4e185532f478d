fn main() {
    std::process::exit(toolrl::cli::run(std::env::args_os()));
}
