fn main() {
    std::process::exit(matchkit::cli::run());
}
