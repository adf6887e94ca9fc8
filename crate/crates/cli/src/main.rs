fn main() {
    std::process::exit(beamkit_cli::run(std::env::args_os()));
}
