fn main() {
    std::process::exit(cpmaps::cli::main_with_args(std::env::args_os()));
}
