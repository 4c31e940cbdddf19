fn main() {
    std::process::exit(kotta::cli::run());
}
