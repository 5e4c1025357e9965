fn main() {
    std::process::exit(turntake::cli::main_with_args(std::env::args_os()));
}
