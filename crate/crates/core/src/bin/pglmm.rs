fn main() {
    std::process::exit(pglmm::cli::main_with_args(std::env::args_os()));
}
