fn main() {
    std::process::exit(protoseg::cli::cli_dispatch(std::env::args_os()));
}
