fn main() {
    std::process::exit(hotforge::cli::run());
}
