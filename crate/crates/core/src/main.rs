fn main() {
    std::process::exit(cpelab::cli::run(std::env::args()));
}
