fn main() {
    std::process::exit(relguide::cli::main());
}
