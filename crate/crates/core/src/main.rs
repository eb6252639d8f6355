fn main() {
    std::process::exit(ist::cli::main_with_args(std::env::args_os()));
}
