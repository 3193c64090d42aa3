fn main() {
    std::process::exit(dsca::cli::main_with_args(std::env::args_os()));
}
