fn main() {
    std::process::exit(mmfuse_cli::main_with_args(std::env::args_os()));
}
