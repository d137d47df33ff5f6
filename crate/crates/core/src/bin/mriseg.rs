fn main() {
    std::process::exit(mriseg::cli::main_with_args(std::env::args_os()));
}
