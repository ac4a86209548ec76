fn main() {
    std::process::exit(tabgns::cli::run(std::env::args()));
}
