fn main() {
    std::process::exit(gridhaul::cli::cli_main(std::env::args_os()));
}
