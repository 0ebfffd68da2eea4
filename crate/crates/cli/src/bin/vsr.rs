fn main() {
    std::process::exit(vsr_cli::run(std::env::args_os()));
}
