fn main() {
    std::process::exit(sgtb::cli::main());
}
