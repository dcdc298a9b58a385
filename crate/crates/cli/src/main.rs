fn main() {
    std::process::exit(eventscope_cli::run(std::env::args_os()));
}
