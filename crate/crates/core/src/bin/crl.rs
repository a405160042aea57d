fn main() {
    std::process::exit(crl_core::cli::main_with_args(std::env::args_os()));
}
