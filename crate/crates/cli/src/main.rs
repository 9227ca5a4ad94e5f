fn main() {
    std::process::exit(fastslow_cli::run(std::env::args_os()));
}
