fn main() {
    std::process::exit(parity_superposition::cli::main_with_args(std::env::args_os()));
}
