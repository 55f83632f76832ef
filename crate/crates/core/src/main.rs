fn main() {
    std::process::exit(htgnn::cli::run_command(std::env::args_os()));
}
