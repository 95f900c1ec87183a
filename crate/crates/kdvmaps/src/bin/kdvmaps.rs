fn main() {
    std::process::exit(kdvmaps::cli::main_with_args(std::env::args_os()));
}
