fn main() {
    std::process::exit(condreg_cli::main_with_args(std::env::args_os()));
}
