fn main() {
    std::process::exit(inr4d_cli::main_with_args(std::env::args_os()));
}
