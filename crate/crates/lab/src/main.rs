fn main() {
    std::process::exit(bdpo_lab::cli::main_with_args(std::env::args_os()));
}
