fn main() {
    std::process::exit(surfdepth_cli::main_with_args(std::env::args_os()));
}
