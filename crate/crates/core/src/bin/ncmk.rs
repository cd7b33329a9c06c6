fn main() {
    std::process::exit(ncmk::cli::main());
}
