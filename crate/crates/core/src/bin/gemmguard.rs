fn main() {
    std::process::exit(gemmguard::cli::main_with_args(std::env::args_os()));
}
