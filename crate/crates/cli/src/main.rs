fn main() {
    std::process::exit(smm_cli::run(std::env::args()));
}
