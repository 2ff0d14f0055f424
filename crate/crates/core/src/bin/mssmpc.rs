fn main() {
    std::process::exit(mssmpc::cli::main_with_args(std::env::args_os()));
}
