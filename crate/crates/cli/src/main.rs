fn main() {
    std::process::exit(breathwatch_cli::app::run(std::env::args_os()));
}
