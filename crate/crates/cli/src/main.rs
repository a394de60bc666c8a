fn main() {
    std::process::exit(sosched_cli::run(std::env::args_os()));
}
