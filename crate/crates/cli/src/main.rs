fn main() {
    std::process::exit(nsb_cli::run(std::env::args_os()));
}
