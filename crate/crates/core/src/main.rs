fn main() {
    std::process::exit(factor_garch::cli::cli_dispatch(std::env::args_os()));
}
