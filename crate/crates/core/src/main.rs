fn main() {
    std::process::exit(bmimap::cli::main_with_args(std::env::args_os()));
}
