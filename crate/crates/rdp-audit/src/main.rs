fn main() {
    std::process::exit(rdp_audit::cli::main_with_args(std::env::args_os()));
}
