fn main() {
    std::process::exit(adfusion_cli::main_with_args(std::env::args_os()));
}
