fn main() {
    std::process::exit(gaitbac::cli::main_with_args(std::env::args_os()));
}
