fn main() {
    std::process::exit(aai_core::cli::main_with_args(std::env::args_os()));
}
