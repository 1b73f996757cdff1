fn main() {
    std::process::exit(embryocap_cli::main_with_args(std::env::args_os()));
}
