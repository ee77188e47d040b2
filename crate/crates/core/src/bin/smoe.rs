fn main() {
    std::process::exit(smoe::cli::main_with_args(std::env::args_os()));
}
