fn main() {
    std::process::exit(gridmind_cli::main_with_args(std::env::args_os().collect()));
}
