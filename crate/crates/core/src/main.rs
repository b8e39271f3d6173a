fn main() {
    std::process::exit(texdistill::cli::main());
}
