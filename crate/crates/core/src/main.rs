fn main() {
    std::process::exit(bounded_adam::cli::main());
}
