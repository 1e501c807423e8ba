fn main() {
    std::process::exit(ldw::cli::run(std::env::args()));
}
