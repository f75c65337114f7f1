fn main() {
    std::process::exit(pdmp_cli::main_with_args(std::env::args_os()));
}
