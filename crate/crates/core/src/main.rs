fn main() {
    std::process::exit(madwalk::cli::main_with_args(std::env::args_os()));
}
