fn main() {
    std::process::exit(ngdim_cli::main_with_args(std::env::args_os()));
}
