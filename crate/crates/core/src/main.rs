fn main() {
    std::process::exit(bias_audit::cli::main_with_args(std::env::args_os()));
}
