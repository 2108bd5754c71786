fn main() {
    std::process::exit(hypocert::harness::cli::main_with_args(std::env::args_os()));
}
