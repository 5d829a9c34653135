fn main() {
    std::process::exit(tonedetect_cli::run());
}
