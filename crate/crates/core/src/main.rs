fn main() {
    std::process::exit(rabi_ccd::cli::run_command(std::env::args_os()));
}
