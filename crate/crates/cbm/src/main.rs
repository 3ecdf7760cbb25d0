fn main() {
    std::process::exit(cbm::cli::main());
}
