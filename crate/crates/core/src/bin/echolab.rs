fn main() {
    std::process::exit(echolab::cli::main_with_args(std::env::args_os()));
}
