fn main() {
    std::process::exit(spine_eval::cli::main());
}
