fn main() {
    std::process::exit(homognet::cli::main_with_args(std::env::args_os()));
}
