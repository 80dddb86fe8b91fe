fn main() {
    std::process::exit(emwave_cli::run(std::env::args().collect()));
}
