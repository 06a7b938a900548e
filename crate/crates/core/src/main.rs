fn main() {
    std::process::exit(satdeblur::cli::main());
}
