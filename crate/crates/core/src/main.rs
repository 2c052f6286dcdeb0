fn main() {
    std::process::exit(crupl::cli::main());
}
