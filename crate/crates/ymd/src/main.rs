fn main() {
    std::process::exit(ymd::cli::run());
}
