fn main() {
    std::process::exit(blockadmm::cli::main_with_args(std::env::args_os()));
}
