fn main() {
    std::process::exit(matchvision_cli::run_cli(std::env::args_os()));
}
